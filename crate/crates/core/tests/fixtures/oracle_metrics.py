#!/usr/bin/env python3
"""Writes the metrics fixture pair and the report expected for it.

Counts are computed by brute force over explicit token sets, independently
of the Rust scorer. Run from this directory: python3 oracle_metrics.py
"""
import json
import random

LABELS = ["Agent", "Theme", "Goal", "Path"]
FRAMES = ["Motion", "Giving", "Placing"]


def role(label, s, e):
    return {"label": label, "span": [s, e]}


def handmade():
    toks = "The rain dripped down his neck .".split()
    ex = []
    # worked example: exact 0.5, soft 10/11, global 8/9
    ex.append((toks, [2, 2], "Motion", [role("Path", 3, 5), role("Agent", 0, 1)],
               "Motion", [role("Agent", 0, 1), role("Path", 4, 5)]))
    # perfect
    ex.append((toks, [2, 2], "Motion", [role("Agent", 0, 1)], "Motion", [role("Agent", 0, 1)]))
    # wrong frame
    ex.append((toks, [2, 2], "Giving", [role("Theme", 3, 5)], "Motion", [role("Theme", 3, 5)]))
    # both empty
    ex.append((toks, [2, 2], "Motion", [], "Motion", []))
    # missed everything
    ex.append((toks, [2, 2], "Motion", [role("Goal", 6, 6)], "Motion", []))
    # spurious only
    ex.append((toks, [2, 2], "Motion", [], "Motion", [role("Goal", 3, 3)]))
    # repeated label, overlapping spans
    ex.append((toks, [2, 2], "Placing", [role("Theme", 0, 3), role("Theme", 3, 5)],
               "Placing", [role("Theme", 2, 5), role("Theme", 0, 0), role("Theme", 6, 6)]))
    # wrong label on right span
    ex.append((toks, [2, 2], "Placing", [role("Goal", 3, 5)], "Placing", [role("Path", 3, 5)]))
    return ex


def random_examples(rng, n):
    out = []
    for _ in range(n):
        length = rng.randint(3, 9)
        toks = [f"w{rng.randint(0, 20)}" for _ in range(length)]
        trig = rng.randrange(length)

        def roles():
            rs = []
            for _ in range(rng.randint(0, 3)):
                s = rng.randrange(length)
                e = rng.randrange(s, length)
                rs.append(role(rng.choice(LABELS), s, e))
            return rs

        gold_frame = rng.choice(FRAMES)
        pred_frame = gold_frame if rng.random() < 0.8 else rng.choice(FRAMES)
        gold = roles()
        pred = [dict(r) for r in gold if rng.random() < 0.6] + roles()
        out.append((toks, [trig, trig], gold_frame, gold, pred_frame, pred))
    return out


def tokens_of(r):
    return set(range(r["span"][0], r["span"][1] + 1))


def div(num, den, both_empty):
    if den > 0:
        return num / den
    return 1.0 if both_empty else 0.0


def f1(p, r):
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def micro(tp, fp, fn):
    both = tp + fp + fn == 0
    p, r = div(tp, tp + fp, both), div(tp, tp + fn, both)
    return {"tp": tp, "fp": fp, "fn": fn, "precision": p, "recall": r, "f1": f1(p, r)}


def report(examples, gating):
    etp = efp = efn = 0
    gtp = gfp = gfn = 0
    psum = rsum = 0.0
    npred = ngold = 0
    correct = 0
    for _, _, gf, gold, pf, pred in examples:
        ok = (pf == gf) or not gating
        correct += pf == gf
        npred += len(pred)
        ngold += len(gold)
        gpairs = {(r["label"], t) for r in gold for t in tokens_of(r)}
        ppairs = {(r["label"], t) for r in pred for t in tokens_of(r)}
        if not ok:
            efp += len(pred)
            efn += len(gold)
            gfp += len(ppairs)
            gfn += len(gpairs)
            continue
        # exact: multiset intersection by repeated removal
        remaining = [(r["label"], tuple(r["span"])) for r in gold]
        hits = 0
        for r in pred:
            key = (r["label"], tuple(r["span"]))
            if key in remaining:
                remaining.remove(key)
                hits += 1
        etp += hits
        efp += len(pred) - hits
        efn += len(gold) - hits
        gtp += len(gpairs & ppairs)
        gfp += len(ppairs - gpairs)
        gfn += len(gpairs - ppairs)
        # soft: repeatedly take the best remaining same-label pair
        free_g = set(range(len(gold)))
        free_p = set(range(len(pred)))
        while True:
            best = None
            for g in sorted(free_g):
                for p in sorted(free_p):
                    if gold[g]["label"] != pred[p]["label"]:
                        continue
                    ov = len(tokens_of(gold[g]) & tokens_of(pred[p]))
                    key = (-ov, g, p)
                    if best is None or key < best[0]:
                        best = (key, g, p, ov)
            if best is None:
                break
            _, g, p, ov = best
            free_g.discard(g)
            free_p.discard(p)
            psum += ov / len(tokens_of(pred[p]))
            rsum += ov / len(tokens_of(gold[g]))
    both = npred + ngold == 0
    sp, sr = div(psum, npred, both), div(rsum, ngold, both)
    return {
        "frame_accuracy": correct / len(examples),
        "frame_gating": gating,
        "exact": micro(etp, efp, efn),
        "soft": {
            "pred_instances": npred,
            "gold_instances": ngold,
            "precision_sum": psum,
            "recall_sum": rsum,
            "precision": sp,
            "recall": sr,
            "f1": f1(sp, sr),
        },
        "global": micro(gtp, gfp, gfn),
        "counts": {
            "instances": len(examples),
            "gold_roles": ngold,
            "predicted_roles": npred,
            "diagnostics": 0,
        },
    }


def main():
    rng = random.Random(7)
    examples = handmade() + random_examples(rng, 40)
    ontology = {"frames": FRAMES, "roles": LABELS}
    with open("metrics_gold.jsonl", "w") as f:
        f.write(json.dumps({"ontology": ontology}, separators=(",", ":")) + "\n")
        for toks, trig, gf, gold, _, _ in examples:
            rec = {"tokens": toks, "trigger": trig, "frame": gf, "roles": gold}
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    with open("metrics_pred.jsonl", "w") as f:
        for toks, trig, _, _, pf, pred in examples:
            rec = {"tokens": toks, "trigger": trig, "frame": pf, "roles": pred,
                   "confidence": None, "diagnostics": []}
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")
    expected = {"gated": report(examples, True), "ungated": report(examples, False)}
    with open("metrics_expected.json", "w") as f:
        json.dump(expected, f, indent=2)
        f.write("\n")


if __name__ == "__main__":
    main()
