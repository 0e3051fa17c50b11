"""
Aging Curves - Entry Point

This is the main entry point for the aging curve toolkit. It hands the
command line to the subcommand parser of the features package.

The application uses:
- numpy/scipy for the mixed model, the Gibbs sampler and loess
- pandas for the Lahman tables and every CSV artifact
- python-dotenv for environment and config-file parameters
"""

from features.cli import run_cli

if __name__ == "__main__":
    run_cli()
