import math

import numpy as np

from mwlab.weights import MatrixWeightSpec


def builtin_catalogue(m: int) -> list[tuple[str, MatrixWeightSpec]]:
    """The built-in weights exercised by the sweeps, sized for ``m``."""
    cat = [
        ("identity", MatrixWeightSpec.identity(1, m)),
        ("power(0.5)", MatrixWeightSpec.power(0.5, 1, m)),
        ("power(1)", MatrixWeightSpec.power(1.0, 1, m)),
        ("anisotropic(0.5,1.5)", MatrixWeightSpec.anisotropic((0.5, 1.5), m)),
    ]
    if m == 2:
        cat.append(("conjugated(0,1)", MatrixWeightSpec.conjugated((0.0, 1.0), math.pi / 4)))
    if m == 3:
        cat.append(("conjugated(0,0.5,1)", MatrixWeightSpec.conjugated((0.0, 0.5, 1.0), math.pi / 4)))
    return cat


def constant_weight(M: np.ndarray, n: int = 1) -> MatrixWeightSpec:
    M = np.asarray(M, dtype=complex)
    return MatrixWeightSpec.custom(lambda X: np.broadcast_to(M, (len(X),) + M.shape).copy(), n, M.shape[0])


# acceptance bookkeeping: criterion -> list of (ok, detail)
ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE.setdefault(criterion, []).append((bool(ok), detail))
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for c in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[c]
        verdict = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        tr.write_line(f"criterion {c:2d}: {verdict}  " + "; ".join(d for _, d in parts))
