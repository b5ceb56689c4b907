# %% [markdown]
# # Attack cost of committee-based finality
#
# 512 large stakers hold 2,359,296 ETH and a pool of 32 ETH validators
# supplies 262,144 ETH per slot. The three accounting rules differ in how
# quickly a block becomes expensive to revert.

# %%
from ssf_lab.cumulative import MOD1, MOD2, MOD3, attack_cost_curve, ch7_distribution, simulate_chain

dist = ch7_distribution()
depths = [1, 2, 4, 8, 16, 32]

# %%
for mod in (MOD1, MOD2, MOD3):
    ledger, chain = simulate_chain(dist, mod, 32, fresh=True)
    curve = attack_cost_curve(ledger, chain[0], depths)
    print(mod.value, "  ".join(f"{d}:{c:,.0f}" for d, c in curve))

# %% MOD2 after 32 slots: (73,728 + 262,144) x 32 = 10,747,904 ETH attested
ledger, chain = simulate_chain(dist, MOD2, 32, fresh=True)
print(f"{ledger.stake(chain[0]):,.0f} ETH attested, cost {ledger.stake(chain[0]) / 3:,.0f} ETH")
