"""Smoke test for the fluxlattice Python extension.

Builds the extension with cargo if needed, imports it from a temporary
directory and exercises the main types.

    python3 python/smoke_test.py
"""

import importlib
import math
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent


def build_extension() -> Path:
    target = Path(os.environ.get("CARGO_TARGET_DIR", ROOT / "target"))
    subprocess.run(
        ["cargo", "build", "-p", "fluxlattice-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    for name in ("libfluxlattice_py.so", "libfluxlattice_py.dylib", "fluxlattice_py.dll"):
        lib = target / "debug" / name
        if lib.exists():
            return lib
    raise SystemExit(f"extension library not found under {target / 'debug'}")


def load(lib: Path):
    tmp = Path(tempfile.mkdtemp(prefix="fluxlattice-"))
    suffix = ".pyd" if lib.suffix == ".dll" else ".so"
    shutil.copy(lib, tmp / f"fluxlattice{suffix}")
    sys.path.insert(0, str(tmp))
    return importlib.import_module("fluxlattice")


def main() -> None:
    fl = load(build_extension())
    checks = 0

    def check(cond: bool, what: str) -> None:
        nonlocal checks
        if not cond:
            raise SystemExit(f"FAIL: {what}")
        checks += 1
        print(f"ok  {what}")

    check(set(fl.builtin_names()) >= {"qubit_resonator", "two_blocks", "plaquette"}, "builtin names")

    c = fl.Circuit.builtin("qubit_resonator")
    check(c.validate() == [], "builtin validates")
    check(c.variables() == ["phi_q", "phi_r"], "reduced variables")
    p = c.params()
    check(p["phi_q.Delta_ghz"] > 0 and p["phi_q.phi_r.g1"] < 0, "derived parameters")
    again = fl.Circuit.from_json(c.to_json())
    check(again.num_branches() == c.num_branches(), "netlist round trip")

    levels = c.spectrum(levels=4)
    check([lvl[1] for lvl in levels[:2]] == ["g", "g"] and levels[0][0] < levels[1][0], "circuit spectrum")

    tag = c.classify()["tag"]
    mixed = fl.Circuit.builtin("qubit_resonator", {"asymmetry": 0.1}).classify()["tag"]
    check(tag == "longitudinal" and mixed == "mixed", "coupling classifier")

    m = fl.SpinBosonModel.longitudinal(0.8, 1.0, 0.3)
    ev = m.eigenvalues([60], 4)
    expect = sorted(k + s * 0.4 - 0.09 for k in range(3) for s in (-1, 1))[:4]
    check(max(abs(a - b) for a, b in zip(ev, expect)) < 1e-10, "polaron spectrum")
    check(m.lang_firsov(60)["residual_offdiag_norm"] < 1e-10, "polaron frame")

    rabi = fl.SpinBosonModel.rabi(5.0, 1.0, 0.1)
    chi = rabi.dispersive_shift([40])
    check(abs(chi / rabi.schrieffer_wolff()["chi"] - 1) < 0.02, "dispersive shift")

    plus, minus = fl.normal_modes(1.0, 1.0, 0.1)
    check(abs(plus - math.sqrt(1.2)) < 1e-12 and abs(minus - math.sqrt(0.8)) < 1e-12, "normal modes")

    plan = fl.frequency_plan([(1.0, 1.0)] * 4, 0.02, 0.3, 0.01)
    check(plan["min_gap"] >= 0.01 and len(plan["connections"]) == 4, "frequency plan")

    two = fl.SpinBosonModel.two_block([5.0, 5.0], [1.0, 1.0], [0.05, 0.05], 0.1)
    scan = two.scan([3, 3], [3.9, 3.95, 4.0], amplitude=0.05, duration=50.0, samples=50)
    check(len(scan["points"]) == 3 and scan["norm_drift"] < 1e-8, "sideband scan")
    loc = two.locality([3, 3], amplitude=0.05, frequency=3.9, duration=20.0)
    check(loc["qubit_disturbance"][1] < 1e-8, "locality probe")

    try:
        fl.Circuit.builtin("nope")
    except fl.FluxlatticeError as e:
        check("unknown builtin" in str(e), "errors map to FluxlatticeError")
    else:
        raise SystemExit("FAIL: expected FluxlatticeError")

    print(f"{checks} checks passed")


if __name__ == "__main__":
    main()
