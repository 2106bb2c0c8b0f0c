from edaflow.main import cli

cli(prog_name="edaflow")
