"""
Hachage spatial et table à adressage ouvert (sondage linéaire) pour coordonnées de voxels.

Les noyaux numba sont compilés en nopython/nogil : ils peuvent tourner en parallèle
depuis plusieurs threads sur la même table (lecture seule après construction).
"""
import math

import numpy as np
from numba import njit

# Premiers du hachage spatial classique (x * p1) xor (y * p2) xor (z * p3)
P1 = 73856093
P2 = 19349663
P3 = 83492791


@njit(nogil=True)
def _home_bucket(vx, vy, vz, bucket_count):
    # Arithmétique int64 avec débordement silencieux ; % numba suit la sémantique Python (>= 0)
    h = (vx * P1) ^ (vy * P2) ^ (vz * P3)
    return h % bucket_count


@njit(nogil=True)
def _contains(keys, used, vx, vy, vz):
    bucket_count = used.shape[0]
    idx = _home_bucket(vx, vy, vz, bucket_count)
    # Le facteur de charge < 1 garantit une case vide : la boucle termine
    while used[idx]:
        if keys[idx, 0] == vx and keys[idx, 1] == vy and keys[idx, 2] == vz:
            return True
        idx += 1
        if idx == bucket_count:
            idx = 0
    return False


@njit(nogil=True)
def insert_coords(keys, used, coords):
    """
    Insère des coordonnées (N, 3) int64 ; renvoie le nombre de collisions primaires
    (case d'origine déjà occupée par une autre clé).
    """
    bucket_count = used.shape[0]
    collisions = 0
    for i in range(coords.shape[0]):
        vx = coords[i, 0]
        vy = coords[i, 1]
        vz = coords[i, 2]
        idx = _home_bucket(vx, vy, vz, bucket_count)
        first = True
        while used[idx]:
            if keys[idx, 0] == vx and keys[idx, 1] == vy and keys[idx, 2] == vz:
                break
            if first:
                collisions += 1
                first = False
            idx += 1
            if idx == bucket_count:
                idx = 0
        if not used[idx]:
            keys[idx, 0] = vx
            keys[idx, 1] = vy
            keys[idx, 2] = vz
            used[idx] = 1
    return collisions


@njit(nogil=True)
def contains_coords(keys, used, coords):
    out = np.zeros(coords.shape[0], dtype=np.uint8)
    for i in range(coords.shape[0]):
        if _contains(keys, used, coords[i, 0], coords[i, 1], coords[i, 2]):
            out[i] = 1
    return out


@njit(nogil=True)
def score_poses(keys, used, resolution, rotations, offsets, scan):
    """
    Score de chaque pose : nombre de points du scan tombant dans un voxel occupé.

    Args:
        rotations: (N, 3, 3) float64.
        offsets: (N, 3) float64, translation exprimée en unités de voxel (t / resolution).
        scan: (K, 3) float64, points dans le repère capteur.
    """
    n = rotations.shape[0]
    out = np.zeros(n, dtype=np.int64)
    for i in range(n):
        r = rotations[i]
        ox = offsets[i, 0]
        oy = offsets[i, 1]
        oz = offsets[i, 2]
        total = 0
        for k in range(scan.shape[0]):
            sx = scan[k, 0]
            sy = scan[k, 1]
            sz = scan[k, 2]
            px = r[0, 0] * sx + r[0, 1] * sy + r[0, 2] * sz
            py = r[1, 0] * sx + r[1, 1] * sy + r[1, 2] * sz
            pz = r[2, 0] * sx + r[2, 1] * sy + r[2, 2] * sz
            vx = math.floor(px / resolution + ox)
            vy = math.floor(py / resolution + oy)
            vz = math.floor(pz / resolution + oz)
            if _contains(keys, used, vx, vy, vz):
                total += 1
        out[i] = total
    return out


def spatial_hash(v, bucket_count: int) -> int:
    """
    Indice de case f(v) mod T, f(v) = (vx.p1) xor (vy.p2) xor (vz.p3) sur 64 bits signés.

    Version Python de référence du noyau numba (mêmes débordements, même modulo).
    """
    if bucket_count < 1:
        raise ValueError(f"Le nombre de cases doit être >= 1 : {bucket_count}")
    v = np.asarray(v, dtype=np.int64).reshape(3)
    primes = np.array([P1, P2, P3], dtype=np.int64)
    products = v * primes  # débordement modulo 2^64 sur tableaux numpy
    h = np.bitwise_xor(np.bitwise_xor(products[0], products[1]), products[2])
    return int(np.mod(h, np.int64(bucket_count)))


def next_power_of_two(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def full_hashes(coords: np.ndarray) -> np.ndarray:
    """Valeurs f(v) sur 64 bits signés, avant le modulo, pour des coordonnées (N, 3)."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 3)
    with np.errstate(over="ignore"):
        products = coords * np.array([P1, P2, P3], dtype=np.int64)
    return products[:, 0] ^ products[:, 1] ^ products[:, 2]


def collision_floor(coords: np.ndarray) -> float:
    """
    Taux de collisions primaires incompressible : part des coordonnées distinctes dont f(v)
    est déjà pris par une autre, quel que soit T (ex : (-1, 5, 1) et (1, 5, -1)).
    """
    n = int(np.asarray(coords).reshape(-1, 3).shape[0])
    if n == 0:
        return 0.0
    return (n - np.unique(full_hashes(coords)).shape[0]) / n
