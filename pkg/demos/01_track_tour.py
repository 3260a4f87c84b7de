# %% [markdown]
# # A tour of a generated track
#
# Tracks are closed splines with a fixed width, rasterized into a boolean
# occupancy grid. Obstacles are rectangles attached to one border; chicanes
# are short S-bends pushed into the centerline.

# %%
import numpy as np

from racelab.track import TrackConfig, export_pgm, export_svg, generate_track

borders, tmap = generate_track(TrackConfig(rng_seed=3))
print(f"lap length {borders.length():.2f}, grid {tmap.grid.shape}, cell {tmap.cell_size:.5f}")
print(f"{len(tmap.obstacles)} obstacles, chicanes at lap fractions {borders.chicanes}")

# %% [markdown]
# About a fifth of the map is drivable. The start pose sits on the
# centerline at parameter 0, heading along the lap.

# %%
print(f"drivable fraction {tmap.grid.mean():.3f}")
print("start", borders.start_point, "heading", round(borders.start_heading, 3))

# %% [markdown]
# Membership queries take world coordinates.

# %%
probe = borders.centerline(np.linspace(0, 1, 8, endpoint=False))
print(tmap.is_inside(probe))
print(tmap.is_inside(np.array([[0.0, 0.0], [0.99, 0.99]])))

# %% [markdown]
# Debug exports: a PGM image of the grid and an SVG outline.

# %%
export_pgm(tmap, "track_3.pgm")
export_svg(borders, "track_3.svg")
print("wrote track_3.pgm and track_3.svg")
