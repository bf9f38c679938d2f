"""Command-line surface: dataset files, run configs, reports and subcommands."""
