"""Polygons, hulls and the overlap test used for matching.

Run: python demos/geometry_tour.py
"""
import numpy as np

from blockspot.geometry import Polygon, convex_hull, geometric_match, intersection_area, triangulate

# two overlapping boxes
a = Polygon([(0, 0), (10, 0), (10, 4), (0, 4)])
b = Polygon([(6, 1), (16, 1), (16, 5), (6, 5)])
print("areas", a.area, b.area)
print("overlap", intersection_area(a, b))  # 4 x 3 = 12

# a small box sitting inside a big one counts as a match either way round
big = Polygon([(0, 0), (100, 0), (100, 20), (0, 20)])
word = Polygon([(5, 5), (25, 5), (25, 15), (5, 15)])
print("word in line:", geometric_match(big, word))
print("line in word:", geometric_match(word, big))

# hull of a point cloud, counter-clockwise
rng = np.random.default_rng(0)
pts = rng.normal(size=(30, 2))
h = convex_hull(pts)
print(len(h), "hull vertices, area", round(h.area, 3))

# concave polygons are split into triangles before clipping
L = Polygon([(0, 0), (4, 0), (4, 1), (1, 1), (1, 4), (0, 4)])
tris = triangulate(L)
print(len(tris), "triangles, total", sum(Polygon(t).area for t in tris), "=", L.area)
print("L vs box", round(intersection_area(L, Polygon([(0, 0), (2, 0), (2, 2), (0, 2)])), 9))
