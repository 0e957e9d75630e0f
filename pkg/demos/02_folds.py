# Anchor-grouped, score-stratified folds and their audit.
from collections import Counter

from simscore.data import anchor_groups, audit_folds, make_folds
from simscore.synthetic import fold_fixture

records = fold_fixture(seed=0)
print(len(records), "records,", len({r.anchor for r in records}), "distinct anchors")

# Anchors that share a word are merged, so "gear unit3" and "gear unit4" travel together.
groups = anchor_groups(records)
print(len(groups), "independent groups; largest holds", max(map(len, groups)), "records")

folds = make_folds(records, k=5, n_bins=5, seed=0)
print("fold sizes:", folds.sizes())

audit = audit_folds(records, folds)
print("anchor splits:", audit.anchor_splits)
print("shared-word splits:", audit.shared_word_splits)
print(f"size ratio {audit.size_ratio:.2f}, max fold-mean deviation {audit.max_mean_deviation:.3f}")
print("audit ok:", audit.ok)

# Score mix per fold
for f in range(folds.k):
    ids = set(folds.members(f))
    print(f, sorted(Counter(r.score for r in records if r.id in ids).items()))
