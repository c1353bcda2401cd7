"""Test suite for dynlio."""
