"""Evaluation metrics and reporting: sequence accuracy (the headline
metric), end-to-end patch accuracy, and per-CWE breakdowns."""

import csv
import json
from dataclasses import dataclass, field


@dataclass
class EvalReport:
    overall_sequence_accuracy: float
    patch_accuracy: float | None
    per_cwe: dict[str, tuple[int, int, float]]  # cwe -> (hits, total, fraction)
    beam_width: int | None = None
    split: str | None = None
    top_k: int = 10

    def to_dict(self) -> dict:
        return {
            "overall_sequence_accuracy": self.overall_sequence_accuracy,
            "patch_accuracy": self.patch_accuracy,
            "per_cwe": {
                cwe: {"hits": h, "total": t, "fraction": f}
                for cwe, (h, t, f) in self.per_cwe.items()
            },
            "beam_width": self.beam_width,
            "split": self.split,
        }

    def save_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    def top_rows(self):
        """Per-CWE rows sorted by total descending (ties by id), top_k first."""
        rows = sorted(self.per_cwe.items(), key=lambda kv: (-kv[1][1], kv[0]))
        return rows[: self.top_k]

    def to_table(self) -> str:
        lines = [f"{'CWE ID':<12} {'accuracy':>10} {'hits/total':>12}"]
        for cwe, (hits, total, frac) in self.top_rows():
            lines.append(f"{cwe:<12} {frac:>9.2%} {f'{hits}/{total}':>12}")
        overall = self.overall_sequence_accuracy
        lines.append(f"{'All':<12} {overall:>9.2%}")
        if self.patch_accuracy is not None:
            lines.append(f"patch accuracy: {self.patch_accuracy:.2%}")
        return "\n".join(lines)

    def save_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cwe", "hits", "total", "fraction"])
            for cwe, (hits, total, frac) in self.top_rows():
                writer.writerow([cwe, hits, total, frac])


def sequence_accuracy(beams, golds) -> float:
    """Mean over samples of: 1 if any hypothesis equals the gold diff tokens.

    beams is one list of hypothesis token sequences per sample; golds the
    corresponding gold serialized diffs.
    """
    if len(beams) != len(golds):
        raise ValueError("beams and golds differ in length")
    if not golds:
        return 0.0
    hits = sum(_hit(beam, gold) for beam, gold in zip(beams, golds))
    return hits / len(golds)


def _hit(beam, gold) -> bool:
    gold = list(gold)
    return any(list(hyp) == gold for hyp in beam)


def sequence_hits(beams, golds) -> list[bool]:
    if len(beams) != len(golds):
        raise ValueError("beams and golds differ in length")
    return [_hit(beam, gold) for beam, gold in zip(beams, golds)]


def patch_accuracy(candidate_lists, fixed_functions) -> float:
    """Mean over samples of: 1 if any candidate function equals the fix."""
    if len(candidate_lists) != len(fixed_functions):
        raise ValueError("candidates and fixed functions differ in length")
    if not fixed_functions:
        return 0.0
    hits = 0
    for candidates, fixed in zip(candidate_lists, fixed_functions):
        fixed = list(fixed)
        hits += any(list(c) == fixed for c in candidates)
    return hits / len(fixed_functions)


def per_cwe_report(
    hits,
    cwes,
    patch_acc: float | None = None,
    beam_width: int | None = None,
    split: str | None = None,
    top_k: int = 10,
) -> EvalReport:
    """Group per-sample hit flags by CWE token into an EvalReport."""
    if len(hits) != len(cwes):
        raise ValueError("hits and cwes differ in length")
    grouped: dict[str, list[bool]] = {}
    for hit, cwe in zip(hits, cwes):
        grouped.setdefault(cwe, []).append(bool(hit))
    per_cwe = {
        cwe: (sum(flags), len(flags), sum(flags) / len(flags)) for cwe, flags in grouped.items()
    }
    overall = sum(hits) / len(hits) if hits else 0.0
    return EvalReport(overall, patch_acc, per_cwe, beam_width, split, top_k)
