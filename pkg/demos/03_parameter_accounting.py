"""Where the parameters of GRCNN-56 live.

Prints the per-component table, then shows how the recurrent-weight tying
choice changes the total for the deeper GRCNN-110 layout.

Run:  python demos/03_parameter_accounting.py
"""
from grcnn import build, grcnn56_spec, grcnn110_spec, param_count, spec_from_options, spec_to_options
from grcnn.model import parameter_report

print(parameter_report(grcnn56_spec(), "GRCNN-56"))

for name, spec in (("GRCNN-56", grcnn56_spec()), ("GRCNN-110", grcnn110_spec())):
    opts = spec_to_options(spec)
    opts["tie_recurrent"] = "true"
    tied = param_count(build(spec_from_options(opts)))
    print(f"{name}: untied recurrent weights {param_count(build(spec)):,}, tied {tied:,}")
