# %% [markdown]
# # Justification latency across variants
#
# SSF justifies and acknowledges a block inside the slot that proposed it.
# The streamlined variant shaves a round off every slot but justifies two
# slots later. The baseline graded-agreement protocol decides one slot later.

# %%
import numpy as np

from ssf_lab.netsim import NetworkConfig, Simulation, evaluate
from ssf_lab.tob import Variant

# %%
for variant in (Variant.SSF, Variant.STREAMLINED, Variant.BASELINE_4D, Variant.FASTCONFIRM):
    m = evaluate(Simulation(variant, NetworkConfig(16, seed=1), 30).run())
    row = {k: np.mean(v) for k, v in m.latencies.items() if v}
    print(f"{variant.value:12s} rounds/slot={m.rounds}",
          " ".join(f"{k}={v:.1f}" for k, v in sorted(row.items())))

# %% per-slot view of a streamlined run
m = evaluate(Simulation(Variant.STREAMLINED, NetworkConfig(8), 8).run())
for r in m.blocks:
    print(r["slot"], "justified in", r["slot_justified"], "finalized in", r["slot_finalized"])
