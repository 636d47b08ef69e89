# Identify a source from its deposited-energy histogram: build lookup tables
# for two isotopes, acquire Lu-177 and split the measured counts across its
# emission lines.
import numpy as np

from gammaspec.harness import RunContext, build_table_family, normalize_config, spectrum_trial

ctx = RunContext(normalize_config({}, "spectrum"), seed=5)
response = ctx.response()
tables = build_table_family(ctx, ["Ba133", "Lu177"], [10.0], 100_000, 0.1, ctx.rng("tables"), response)
for t in tables:
    print(t.scenario_id, "bins:", t.bins.size, "expected counts:", round(t.expected.sum()))

acq, hist, match, spectrum = spectrum_trial(ctx, ctx.isotope("Lu177"), 10_000, tables, response,
                                            ctx.rng("trial"))
print("records:", len(acq.records), acq.flag_counts())
print("SSD per table:", {k: round(v) for k, v in match.ssds.items()})
print("selected:", match.best, " margin:", round(match.margin, 2))
for e, n in zip(spectrum.energies, spectrum.assigned_counts):
    print(f"{e:6.1f} keV  {n:9.1f}")
print("unmapped:", spectrum.unmapped, " total:", spectrum.total, " histogram:", hist.total)
