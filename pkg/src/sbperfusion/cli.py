"""Command line entry point.

Exit status: 0 on success, 2 when the scene or arguments fail validation,
3 on numerical failure. ``SBPERFUSION_WORKERS`` sets the worker count.
"""

import argparse
import sys

import numpy as np
from scipy import linalg

from .geometry import GeometryError
from .harness import MODES, ComparisonError, RunConfig, SceneValidationError, run
from .kernel import AssemblyError
from .scene import SceneError
from .solver1d import SolverError

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def build_parser():
    p = argparse.ArgumentParser(prog="sbperfusion", description="Slender-body perfusion solver")
    p.add_argument("mode", choices=MODES)
    p.add_argument("--scene", default="straight", help="built-in scene name or JSON scene file")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--eps", type=float, nargs="+", help="slenderness value(s)")
    p.add_argument("--nodes", type=int, nargs="+", help="mesh size(s) N")
    p.add_argument("--theta-order", type=int, default=None, help="angular quadrature order (default: auto)")
    p.add_argument("--seed", type=int, default=0)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig(scene=args.scene, mode=args.mode, out=args.out, eps=args.eps, nodes=args.nodes,
                           theta_order=args.theta_order, seed=args.seed)
        report = run(config)
    # LinAlgError subclasses ValueError, so numerical failures are caught first
    except (SolverError, AssemblyError, np.linalg.LinAlgError, linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SceneValidationError, SceneError, GeometryError, ComparisonError, ValueError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    print(f"{report.mode}: wrote {', '.join(report.files) or 'report.json'} to {args.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
