"""
Parameters and multiplies of the six variants
=============================================
"""

from reskws.models import VARIANTS, footprint, receptive_field

# full per-layer table for the largest dilated model
print(footprint("res15").to_text())
print()

print(f"{'model':<14}{'params':>10}{'multiplies':>16}{'receptive field':>18}")
for name in VARIANTS:
    fp = footprint(name)
    rf = "x".join(map(str, receptive_field(name)))
    print(f"{name:<14}{fp.n_params:>10,}{fp.n_multiplies:>16,}{rf:>18}")

# the multiply count scales with the number of frames; the parameter count does not
print()
for frames in (90, 98, 101):
    fp = footprint("res8-narrow", (frames, 40))
    print(f"res8-narrow at T={frames}: {fp.n_multiplies:,} multiplies")
