"""Training simulation: tasks, partitioning, schedules and the protocol loop."""
