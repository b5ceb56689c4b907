# %% [markdown]
# # Available chain versus finality under a partition
#
# Two halves of the validator set cannot hear each other until GST, which is
# set to the end of the run. Each half keeps extending its own chain, but no
# side can gather a 2/3 quorum, so nothing is justified or finalized.

# %%
from ssf_lab.core import Block
from ssf_lab.harness import parse_scenario
from ssf_lab.netsim import evaluate, run

sc = parse_scenario("partition-ssf")
trace = run(sc)
groups = sc.adversary.group_of(sc.network.n)

# %% chain length per side
length = {}
for e in trace.of_kind("propose"):
    g = groups[e["v"]]
    length[g] = length.get(g, 0) + 1
print("blocks per side:", length)

# %%
print("justify events:", len(trace.of_kind("justify")))
print("finalize events:", len(trace.of_kind("finalize")))
m = evaluate(trace)
print("safety violations:", m.safety_violations)
