"""Navigation domain: landmark gridworlds, instructed policies, RL."""
