"""Surface factors, their products and the round 4-sphere."""

from .factors import (
    SurfaceFactor,
    load_mesh_factor,
    make_flat_torus_factor,
    make_sphere_factor,
    make_synthetic_factor,
    mesh_factor,
    weyl_spectrum,
)
from .product import ProductManifold4D, ScalarField, Sphere4Model, make_product, random_field

__all__ = [
    "SurfaceFactor",
    "load_mesh_factor",
    "make_flat_torus_factor",
    "make_sphere_factor",
    "make_synthetic_factor",
    "mesh_factor",
    "weyl_spectrum",
    "ProductManifold4D",
    "ScalarField",
    "Sphere4Model",
    "make_product",
    "random_field",
]
