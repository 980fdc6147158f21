"""Visual concept domain: rendered scenes, spatial captions, conv models."""
