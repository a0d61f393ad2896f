"""Two-stage cold-start candidate retrieval: social seeding plus
embedding-neighbour expansion, with the synthetic world and offline
evaluation needed to study it."""

__version__ = "0.1.0"
