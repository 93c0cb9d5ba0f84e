"""Collects one verdict per acceptance criterion for the terminal summary."""

TITLES = {
    1: "Hellinger oracle",
    2: "gradient correctness",
    3: "uncertainty vs randomised dimensions",
    4: "OoD separation by r_p",
    5: "discrete trap experiment",
    6: "OPE unbiasedness",
    7: "continuous-control ordering",
    8: "behaviour-policy conformance",
    9: "reproducibility",
}

_parts: dict[int, list[tuple[str, bool, str]]] = {}


def record(criterion, part, ok, detail=""):
    _parts.setdefault(criterion, []).append((part, bool(ok), detail))
    print(f"criterion {criterion} / {part}: {'PASS' if ok else 'FAIL'} {detail}")
    return ok


def summary_lines():
    lines = []
    for k in sorted(_parts):
        parts = _parts[k]
        verdict = "PASS" if all(ok for _, ok, _ in parts) else "FAIL"
        detail = "; ".join(f"{name}={'ok' if ok else 'FAIL'} ({info})" if info else
                           f"{name}={'ok' if ok else 'FAIL'}" for name, ok, info in parts)
        lines.append(f"criterion {k} [{TITLES[k]}]: {verdict} | {detail}")
    return lines
