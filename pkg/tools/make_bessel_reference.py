"""Regenerate the high-precision Bessel K reference table.

Writes src/prefcausal/data/bessel_kv_reference.json: for each order nu on the
test lattice and each argument x (log-spaced over [1e-3, 30]), the value of
K_nu(x) computed with mpmath at 60 decimal digits and stored to 50 significant
digits. The shipped JSON is the independent oracle the test suite and the
`validate` subcommand compare the runtime implementation against; it only
needs regenerating if the lattice changes.

Run from the repository root:

    python3 tools/make_bessel_reference.py
"""

from __future__ import annotations

import json
from pathlib import Path

import mpmath as mp
import numpy as np

ORDERS = (0.3, 0.5, 1.0, 1.5, 2.7)
X_LO = 1e-3
X_HI = 30.0
N_X = 41

OUT = Path(__file__).resolve().parent.parent / "src" / "prefcausal" / "data" / "bessel_kv_reference.json"


def main() -> None:
    mp.mp.dps = 60
    xs = np.logspace(np.log10(X_LO), np.log10(X_HI), N_X)
    entries = []
    for nu in ORDERS:
        for x in xs:
            # The float64 grid value is the exact binary argument the runtime
            # implementation will be handed, so convert it losslessly.
            val = mp.besselk(mp.mpf(nu), mp.mpf(float(x)))
            entries.append({
                "nu": float(nu),
                "x": float(x),
                "kv": mp.nstr(val, 50),
            })
    OUT.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "description": "Modified Bessel function of the second kind, 50 significant digits (mpmath, dps=60)",
        "orders": list(ORDERS),
        "x_range": [X_LO, X_HI],
        "entries": entries,
    }
    OUT.write_text(json.dumps(payload, indent=1) + "\n")
    print(f"wrote {len(entries)} entries to {OUT}")


if __name__ == "__main__":
    main()
