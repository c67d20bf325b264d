"""Hopper locomotion suite: per-terrain policies, switch estimators, setup
policies, and a composed multi-terrain evaluation harness."""

__version__ = "0.1.0"
