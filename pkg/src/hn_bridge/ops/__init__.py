"""Forensic back end: honeytokens, alerting and reports over recorded evidence."""
