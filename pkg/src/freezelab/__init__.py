"""Desk-scale GAN transfer-learning lab."""
