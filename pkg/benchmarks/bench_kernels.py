"""Time the numba kernels against their numpy counterparts.

Run ``python3 benchmarks/bench_kernels.py``.  Both forms are imported
directly from :mod:`gtfm.kernels`, so the ``GTFM_DISABLE_NUMBA`` flag does
not matter here.  Each kernel is called once before timing so that numba
compilation is excluded.
"""

import argparse
import timeit

import numpy as np

from gtfm import kernels as K
from gtfm.model import BoundModel, catalog_model
from gtfm.series import data_path, load_frame


def _best(fn, number):
    fn()
    return min(timeit.repeat(fn, number=number, repeat=5)) / number


def cases():
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((500, 40)).cumsum(axis=1)
    Xs = rng.standard_normal((500, 40)).cumsum(axis=1)
    U = rng.standard_normal((500, 40))
    yield "cross_moments (500 x 40, L=10)", (lambda: K._cross_moments_nb(Y, Xs, 10, 1)), \
        (lambda: K._cross_moments_np(Y, Xs, 10, 1))
    yield "ar_filter (500 x 40)", (lambda: K._ar_filter_nb(U, 0.7)), (lambda: K._ar_filter_np(U, 0.7))

    frame = load_frame(data_path("demo_lgd.csv"), "LGD")
    for name in ("I", "II", "III", "IV"):
        model = BoundModel(catalog_model(name), frame)
        z = model.initial_point(np.random.default_rng(1))
        args = model._args()
        if model.noncentered:
            nb, npf = K._logp_grad_nc_nb, K._logp_grad_nc_np
            label = f"logp_grad_nc model {name}"
        else:
            nb, npf = K._logp_grad_nb, K._logp_grad_np
            label = f"logp_grad model {name}"
        yield label, (lambda nb=nb, z=z, a=args: nb(z, *a)), (lambda npf=npf, z=z, a=args: npf(z, *a))
        zc = model.to_centered(z)
        yield f"logp_grad (centred) model {name}", (lambda z=zc, a=args: K._logp_grad_nb(z, *a)), \
            (lambda z=zc, a=args: K._logp_grad_np(z, *a))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--number", type=int, default=200, help="calls per timing repeat")
    ns = ap.parse_args(argv)
    print(f"{'kernel':40s} {'numba us':>10s} {'numpy us':>10s} {'speedup':>8s}")
    for label, f_nb, f_np in cases():
        t_nb = _best(f_nb, ns.number) * 1e6
        t_np = _best(f_np, ns.number) * 1e6
        print(f"{label:40s} {t_nb:10.1f} {t_np:10.1f} {t_np / t_nb:8.1f}x")


if __name__ == "__main__":
    main()
