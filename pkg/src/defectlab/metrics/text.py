"""Text-side metrics: grid-answer parsing, location scores, balanced
accuracy and ROUGE-L.

Protocol decisions fixed here (and flagged in every report header):
Within-1 counts a prediction whose Chebyshev grid distance is <= 1;
Manhattan distance of an unparsed answer is 4; ROUGE-L is the LCS F1 over
lowercase whitespace tokens.
"""

from __future__ import annotations

UNPARSED_MANHATTAN = 4.0

# Canonical 3x3 grid phrases; (1,1) is rendered plain "center".
GRID_PHRASES: dict[str, tuple[int, int]] = {
    "top-left": (0, 0),
    "top-center": (0, 1),
    "top-right": (0, 2),
    "middle-left": (1, 0),
    "center": (1, 1),
    "middle-right": (1, 2),
    "bottom-left": (2, 0),
    "bottom-center": (2, 1),
    "bottom-right": (2, 2),
}

# Longest phrases first so "top-center" is consumed before bare "center".
_PHRASES_BY_LENGTH = sorted(GRID_PHRASES, key=len, reverse=True)


def cell_phrase(cell: tuple[int, int]) -> str:
    """Canonical phrase for a grid cell; inverse of the parser."""
    for phrase, c in GRID_PHRASES.items():
        if c == tuple(cell):
            return phrase
    raise ValueError(f"not a 3x3 grid cell: {cell}")


def parse_grid_answer(text: str) -> tuple[int, int] | None:
    """Scan text for the nine canonical grid phrases.

    Returns the cell when exactly one phrase occurrence is found, else
    None (unparsed). Matching is case-insensitive; longer phrases shadow
    their substrings, so "top-center" does not also count as "center".
    """
    remaining = text.lower()
    hits: list[tuple[int, int]] = []
    for phrase in _PHRASES_BY_LENGTH:
        start = 0
        while True:
            idx = remaining.find(phrase, start)
            if idx < 0:
                break
            hits.append(GRID_PHRASES[phrase])
            # blank the span so shorter phrases cannot re-match inside it
            remaining = remaining[:idx] + "\0" * len(phrase) + remaining[idx + len(phrase):]
            start = idx + len(phrase)
    if len(hits) == 1:
        return hits[0]
    return None


def location_metrics(
    pred_cells: list[tuple[int, int] | None],
    gt_cells: list[tuple[int, int]],
) -> dict[str, float]:
    """Exact accuracy, Within-1 rate, and mean Manhattan distance.

    Unparsed predictions count as wrong, fail Within-1, and contribute a
    Manhattan distance of 4 (the grid maximum).
    """
    if len(pred_cells) != len(gt_cells):
        raise ValueError(f"length mismatch: {len(pred_cells)} predictions vs {len(gt_cells)} labels")
    if not gt_cells:
        raise ValueError("empty input")
    exact = 0
    within1 = 0
    manhattan = 0.0
    for pred, gt in zip(pred_cells, gt_cells):
        if pred is None:
            manhattan += UNPARSED_MANHATTAN
            continue
        dr = abs(pred[0] - gt[0])
        dc = abs(pred[1] - gt[1])
        exact += int(dr == 0 and dc == 0)
        within1 += int(max(dr, dc) <= 1)
        manhattan += dr + dc
    n = len(gt_cells)
    return {"acc": exact / n, "within1": within1 / n, "manhattan": manhattan / n}


def balanced_accuracy(pred_labels: list[bool], gt_labels: list[bool]) -> dict[str, float | bool]:
    """(TPR + TNR) / 2 over binary labels.

    A class absent from the ground truth is excluded from the mean and the
    result is flagged (``partial``).
    """
    if not gt_labels:
        raise ValueError("empty input")
    if len(pred_labels) != len(gt_labels):
        raise ValueError("length mismatch")
    tp = sum(1 for p, g in zip(pred_labels, gt_labels) if g and p)
    fn = sum(1 for p, g in zip(pred_labels, gt_labels) if g and not p)
    tn = sum(1 for p, g in zip(pred_labels, gt_labels) if not g and not p)
    fp = sum(1 for p, g in zip(pred_labels, gt_labels) if not g and p)
    rates = []
    if tp + fn > 0:
        rates.append(tp / (tp + fn))
    if tn + fp > 0:
        rates.append(tn / (tn + fp))
    return {"balanced_acc": sum(rates) / len(rates), "partial": len(rates) < 2}


def _lcs_length(a: list[str], b: list[str]) -> int:
    # classic O(len(a)*len(b)) table, rolling rows
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            if x == y:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str) -> float:
    """ROUGE-L F1 between two strings.

    Tokenization is lowercase whitespace splitting; returns 0.0 when either
    side has no tokens.
    """
    cand = candidate.lower().split()
    ref = reference.lower().split()
    if not cand or not ref:
        return 0.0
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)
