"""Delay-compensated pose estimation and stabilization for a networked
differential-drive robot."""
