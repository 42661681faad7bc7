"""Deterministic text output: CSV with fixed schemas and stable float text."""


def format_float(v):
    """17 significant digits: round-trip exact for doubles, byte-stable."""
    return format(float(v), ".17g")


def write_csv(path, header, rows):
    """Write rows of floats/strings under a fixed header, stable formatting."""
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(
                cell if isinstance(cell, str) else format_float(cell)
                for cell in row) + "\n")
