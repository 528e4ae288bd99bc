"""HTTP service exposing simulation, validity test and direct-effect runs."""
