"""
The comparison table from a full run
====================================

Runs the shipped full config and prints each row with the numbers behind it.
"""

from bisynclab.harness import format_table, run_experiment, shipped_config, table1_report

art = run_experiment(shipped_config("demo_full"))
print(format_table(table1_report(art.measures)))
print("violations:", art.summary["violations"], "exit code:", art.exit_code)
