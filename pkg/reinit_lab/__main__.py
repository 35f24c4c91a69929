"""Main module of the reinit_lab package."""

from reinit_lab.cli import cli

if __name__ == '__main__':
    cli()
