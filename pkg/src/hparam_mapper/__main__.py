"""``python -m hparam_mapper`` runs the command line interface."""

from . import _main

if __name__ == "__main__":
    _main()
