"""
Command-line interface for carnotlip (``python -m carnotlip``).
"""

from .cli import main

if __name__ == '__main__':
    main()
