"""Small shared helpers: log-log regression, dyadic shells, deterministic I/O."""

import csv
import json

import numpy as np


def loglog_slope(r, e, drop_zero=True):
    """Least-squares slope of log(e) against log(r).

    Parameters
    ----------
    r, e : array_like
        Positive abscissae (radii/separations) and values.  Pairs where either
        entry is nonpositive or nonfinite are dropped when ``drop_zero`` is set.

    Returns
    -------
    slope : float
    info : dict with keys "r", "e", "intercept", "residual".
    """
    r = np.asarray(r, dtype=float)
    e = np.asarray(e, dtype=float)
    if drop_zero:
        keep = np.isfinite(r) & np.isfinite(e) & (r > 0) & (e > 0)
        r, e = r[keep], e[keep]
    if r.size < 2:
        raise ValueError("need at least 2 usable (r, e) pairs for a slope")
    lr, le = np.log(r), np.log(e)
    coef, res, _, _, _ = np.polyfit(lr, le, 1, full=True)
    slope, intercept = float(coef[0]), float(coef[1])
    residual = float(np.sqrt(res[0] / lr.size)) if res.size else 0.0
    return slope, {"r": r.tolist(), "e": e.tolist(),
                   "intercept": intercept, "residual": residual}


def dyadic_radii(r_min, r_max, base=2.0):
    """Decreasing sequence r_max, r_max/base, ... down to r_min (inclusive-ish)."""
    if not (0 < r_min < r_max):
        raise ValueError("need 0 < r_min < r_max")
    radii = []
    r = float(r_max)
    while r >= r_min * (1 - 1e-12):
        radii.append(r)
        r /= base
    return np.array(radii)


def shell_stats(dist, values, radii):
    """Max/mean of |values| on dyadic shells {radii[k+1] <= dist < radii[k]}.

    ``radii`` must be decreasing.  Returns list of dicts, one per shell with at
    least one sample.
    """
    dist = np.asarray(dist, dtype=float)
    values = np.abs(np.asarray(values, dtype=float))
    out = []
    for k in range(len(radii) - 1):
        hi, lo = radii[k], radii[k + 1]
        m = (dist >= lo) & (dist < hi) & np.isfinite(values)
        if not np.any(m):
            continue
        out.append({"r": float(np.sqrt(lo * hi)), "r_lo": float(lo),
                    "r_hi": float(hi), "count": int(m.sum()),
                    "max": float(values[m].max()),
                    "mean": float(values[m].mean())})
    return out


def fmt_float(x):
    """Deterministic, compact float formatting for reports."""
    if isinstance(x, float):
        return float(f"{x:.12g}")
    return x


def _roundtrip(obj):
    if isinstance(obj, dict):
        return {k: _roundtrip(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_roundtrip(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return fmt_float(float(obj))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _roundtrip(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path, obj):
    """Write a JSON report with sorted keys and stable float formatting."""
    with open(path, "w") as fh:
        json.dump(_roundtrip(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_csv(path, header, rows):
    """Write a CSV table with a fixed float format ("%.12g")."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([f"{x:.12g}" if isinstance(x, (float, np.floating))
                             else x for x in row])
