"""
A reduced desk experiment
=========================

The full chain at a fraction of the default budget: simulate, label,
train all seven models, cross-evaluate offline and compare the three
synthetic labels online.  The `reproduce` command runs the same stages at
full scale and writes every artifact to disk; this script keeps
everything in memory.
"""

from nestedltr.config import RunConfig
from nestedltr.pipeline import offline, online, ordering_checks, prepare, simulate, summarize_logs, train_all

cfg = RunConfig(master_seed=42, n_sessions=5000, online_sessions=4000, n_online_seeds=3)
print(cfg.provenance_line())

world, logs = simulate(cfg)
print(summarize_logs(logs).render())

train, validation, test = prepare(cfg, world, logs)
models = {k: model for k, (model, _) in train_all(cfg, train, validation).items()}

matrix = offline(cfg, models, test)
print(matrix.render())

report = online(cfg, world, models)
print(report.render(control="s1"))

# at this budget the gaps are noisier than in the default profile
lines, ok = ordering_checks(world, matrix, report)
print("\n".join(lines))
