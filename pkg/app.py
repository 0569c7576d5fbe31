import os
import sys

# Add the repository root to the path so `modules` imports resolve from anywhere
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

from modules.cli import main as cli_main


def main(argv=None):
    """
    Main function to run the simulator command line
    """
    return cli_main(argv)


if __name__ == "__main__":
    sys.exit(main())
