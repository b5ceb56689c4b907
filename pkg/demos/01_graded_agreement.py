# %% [markdown]
# # Graded agreement by hand
#
# Three honest validators and one equivocator run a single instance of the
# three-grade protocol. The adversary shows block A to some validators and
# the conflicting sibling A' to others. Outputs below are (grade, tick, log).

# %%
from ssf_lab import ga_schedules as gs

tree, ids = gs.fixture_tree()
names = {v: k for k, v in ids.items()}

# %% honest inputs: everyone proposes A; validator 3 equivocates
honest = [0, 1, 2]
deliveries = [(p, ids["A"], {r: 1 for r in honest}) for p in honest]
deliveries.append((3, ids["A"], gs.relay_closure({0: 1}, honest, 1)))
deliveries.append((3, ids["A'"], gs.relay_closure({1: 3, 2: 3}, honest, 1)))
sched = gs.Schedule(3, 1, 4, {p: ids["A"] for p in honest}, deliveries)

outs = gs.run_schedule(sched, tree)
for p in honest:
    print(p, [(o.grade, o.at, names[o.log]) for o in outs[p]])

# %% every GA property holds for this run
print("violations:", gs.check_properties(sched, outs, tree))

# %% the same check over every schedule the equivocator could pick (n=4)
count = bad = 0
for s in gs.enumerate_schedules(3, 4):
    count += 1
    bad += bool(gs.check_properties(s, gs.run_schedule(s, tree), tree))
print(count, "schedules,", bad, "violations")
