"""Energy-feedback MIMO channel learning for wireless energy transfer."""
