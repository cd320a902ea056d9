"""
Process exit codes shared by every command
"""
EXIT_OK = 0
EXIT_USAGE = 1      # bad flags, config, input file or failed check
EXIT_DIVERGED = 2
