"""Simulated air channel, scenario runner and attack suites."""
