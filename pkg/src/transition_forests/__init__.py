"""Transition forests for per-frame action recognition and online detection."""
