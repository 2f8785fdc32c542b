"""Tests for hparam_mapper."""
