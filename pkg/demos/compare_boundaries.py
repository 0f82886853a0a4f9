"""Reproduce a few reference table rows with both top boundary conditions.

    python demos/compare_boundaries.py [table] [row ...]

Defaults to Table II rows 0 and 7.
"""

import sys

from photoconv.photomodel import TopBoundary
from photoconv.tables import reproduce_row


def main(argv):
    table = argv[0] if argv else "2"
    rows = [int(r) for r in argv[1:]] or [0, 7]
    for i in rows:
        for bc in TopBoundary:
            r = reproduce_row(table, i, bc)
            if not r.ok:
                print(f"table {table} row {i} {bc.value:<11s} failed: {r.error}")
                continue
            e = r.expected
            print(f"table {table} row {i} {bc.value:<11s} R_c {r.R_c:8.2f} (printed {e['R_c']:7.2f})"
                  f"  lambda_c {r.lambda_c:.3f} ({e['lambda_c']})  Im {r.Im_gamma:6.2f} ({e['Im_gamma']})"
                  f"  {'pass' if r.passed else 'miss: ' + ','.join(k for k, v in r.checks().items() if not v)}"
                  f"  {r.seconds:.0f}s")


if __name__ == "__main__":
    main(sys.argv[1:])
