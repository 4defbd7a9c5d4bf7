"""Numba-compiled ray tracing kernels.

Scalar, allocation-free routines compiled with numba; the only array
allocation is the output image.  The heightfield is traversed with a 2-D DDA
over grid cells, clipped to the terrain's z slab so rays skip empty water, and
each visited cell is tested against its two triangles (split along the
low-index to high-index diagonal).  Targets are intersected analytically in
their local frame.

Measured t values are world-space ray parameters throughout: target rays are
transformed into the local frame without renormalizing the direction, which
preserves the parameterization.
"""

import math

import numpy as np
from numba import njit, prange

# ray-offset policy: primary rays accept hits beyond TMIN_PRIMARY, shadow rays
# start SHADOW_OFFSET along the surface normal and accept beyond TMIN_SHADOW
TMIN_PRIMARY = 1e-9
TMIN_SHADOW = 1e-7
SHADOW_OFFSET = 1e-4

# shape codes, aligned with scene.SHAPES order
SHAPE_CUBE = 0
SHAPE_CYLINDER = 1
SHAPE_CONE = 2
SHAPE_SPHERE = 3

# barycentric slack: a hit point computed exactly on the shared diagonal of a
# cell's triangle pair can round to u or v fractionally below zero in one
# triangle and above one in the other, leaking a one-pixel hole through the
# seam; admitting this sliver on both sides closes it (double hits on shared
# edges return the same t, so nearest-hit results are unaffected)
BARY_EPS = 1e-12


@njit(cache=True, inline="always")
def _tri_hit(ax, ay, az, bx, by, bz, cx, cy, cz, ox, oy, oz, dx, dy, dz):
    """Moller-Trumbore ray/triangle test; returns t or -1.0 on miss."""
    e1x = bx - ax; e1y = by - ay; e1z = bz - az
    e2x = cx - ax; e2y = cy - ay; e2z = cz - az
    px = dy * e2z - dz * e2y
    py = dz * e2x - dx * e2z
    pz = dx * e2y - dy * e2x
    det = e1x * px + e1y * py + e1z * pz
    if abs(det) < 1e-14:
        return -1.0
    inv = 1.0 / det
    tx = ox - ax; ty = oy - ay; tz = oz - az
    u = (tx * px + ty * py + tz * pz) * inv
    if u < -BARY_EPS or u > 1.0 + BARY_EPS:
        return -1.0
    qx = ty * e1z - tz * e1y
    qy = tz * e1x - tx * e1z
    qz = tx * e1y - ty * e1x
    v = (dx * qx + dy * qy + dz * qz) * inv
    if v < -BARY_EPS or u + v > 1.0 + BARY_EPS:
        return -1.0
    return (e2x * qx + e2y * qy + e2z * qz) * inv


@njit(cache=True)
def hf_trace(ox, oy, oz, dx, dy, dz, elev, czmax, x0, y0, h, zmin_g, zmax_g, tmin):
    """March a ray across the heightfield; return (t, ix, iy, itri).

    Walks grid cells with a 2-D DDA after clipping the ray to the grid's
    bounding box and the global elevation slab [zmin_g, zmax_g].  A cell's two
    triangles are only tested when the ray segment inside the cell dips below
    the cell's maximum node elevation (czmax).  itri is 0 for the triangle
    (p00, p10, p11) and 1 for (p00, p11, p01); returns (-1.0, -1, -1, -1) on
    a miss.
    """
    nx, ny = elev.shape
    ncx = nx - 1
    ncy = ny - 1
    xmax = x0 + ncx * h
    ymax = y0 + ncy * h
    t0 = tmin
    t1 = 1e30
    if dx != 0.0:
        ta = (x0 - ox) / dx
        tb = (xmax - ox) / dx
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif ox < x0 or ox > xmax:
        return -1.0, -1, -1, -1
    if dy != 0.0:
        ta = (y0 - oy) / dy
        tb = (ymax - oy) / dy
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif oy < y0 or oy > ymax:
        return -1.0, -1, -1, -1
    if dz != 0.0:
        ta = (zmin_g - 1e-3 - oz) / dz
        tb = (zmax_g + 1e-3 - oz) / dz
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
        if tb < t1:
            t1 = tb
    elif oz < zmin_g - 1e-3 or oz > zmax_g + 1e-3:
        return -1.0, -1, -1, -1
    if t0 > t1:
        return -1.0, -1, -1, -1

    px = ox + t0 * dx
    py = oy + t0 * dy
    ix = int(math.floor((px - x0) / h))
    iy = int(math.floor((py - y0) / h))
    if ix < 0:
        ix = 0
    if ix > ncx - 1:
        ix = ncx - 1
    if iy < 0:
        iy = 0
    if iy > ncy - 1:
        iy = ncy - 1
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    if dx != 0.0:
        nxb = x0 + (ix + (1 if sx > 0 else 0)) * h
        tmx = (nxb - ox) / dx
        tdx = h / abs(dx)
    else:
        tmx = 1e30
        tdx = 1e30
    if dy != 0.0:
        nyb = y0 + (iy + (1 if sy > 0 else 0)) * h
        tmy = (nyb - oy) / dy
        tdy = h / abs(dy)
    else:
        tmy = 1e30
        tdy = 1e30

    tin = t0
    while True:
        texit = tmx if tmx < tmy else tmy
        if texit > t1:
            texit = t1
        za = oz + tin * dz
        zb = oz + texit * dz
        zlo = za if za < zb else zb
        if zlo <= czmax[ix, iy] + 1e-12:
            cx0 = x0 + ix * h
            cy0 = y0 + iy * h
            z00 = elev[ix, iy]
            z10 = elev[ix + 1, iy]
            z01 = elev[ix, iy + 1]
            z11 = elev[ix + 1, iy + 1]
            t_a = _tri_hit(cx0, cy0, z00, cx0 + h, cy0, z10, cx0 + h, cy0 + h, z11,
                           ox, oy, oz, dx, dy, dz)
            t_b = _tri_hit(cx0, cy0, z00, cx0 + h, cy0 + h, z11, cx0, cy0 + h, z01,
                           ox, oy, oz, dx, dy, dz)
            best = -1.0
            btri = -1
            if t_a > tmin:
                best = t_a
                btri = 0
            if t_b > tmin and (best < 0.0 or t_b < best):
                best = t_b
                btri = 1
            if best > 0.0:
                return best, ix, iy, btri
        if tmx < tmy:
            tin = tmx
            ix += sx
            tmx += tdx
            if ix < 0 or ix >= ncx:
                return -1.0, -1, -1, -1
        else:
            tin = tmy
            iy += sy
            tmy += tdy
            if iy < 0 or iy >= ncy:
                return -1.0, -1, -1, -1
        if tin > t1:
            return -1.0, -1, -1, -1


@njit(cache=True, inline="always")
def hf_normal(elev, ix, iy, h, itri):
    """Unit upward normal of heightfield cell triangle itri in cell (ix, iy)."""
    z00 = elev[ix, iy]
    z01 = elev[ix, iy + 1]
    z10 = elev[ix + 1, iy]
    z11 = elev[ix + 1, iy + 1]
    if itri == 0:
        a = z10 - z00
        b = z11 - z00
        nx = -a * h
        ny = (a - b) * h
    else:
        b = z11 - z00
        c = z01 - z00
        nx = (c - b) * h
        ny = -c * h
    nz = h * h
    inv = 1.0 / math.sqrt(nx * nx + ny * ny + nz * nz)
    return nx * inv, ny * inv, nz * inv


# ---------------------------------------------------------------------------
# Analytic primitives, local frame.  Each returns (t, nx, ny, nz) with the
# outward local-frame unit normal at the hit, or t = -1.0 on a miss.
# ---------------------------------------------------------------------------

@njit(cache=True, inline="always")
def _isect_sphere(ox, oy, oz, dx, dy, dz, r, tmin):
    a = dx * dx + dy * dy + dz * dz
    b = 2.0 * (ox * dx + oy * dy + oz * dz)
    c = ox * ox + oy * oy + oz * oz - r * r
    disc = b * b - 4.0 * a * c
    if disc < 0.0 or a == 0.0:
        return -1.0, 0.0, 0.0, 1.0
    sq = math.sqrt(disc)
    t = (-b - sq) / (2.0 * a)
    if t <= tmin:
        t = (-b + sq) / (2.0 * a)
    if t <= tmin:
        return -1.0, 0.0, 0.0, 1.0
    px = ox + t * dx
    py = oy + t * dy
    pz = oz + t * dz
    inv = 1.0 / math.sqrt(px * px + py * py + pz * pz)
    return t, px * inv, py * inv, pz * inv


@njit(cache=True, inline="always")
def _isect_cube(ox, oy, oz, dx, dy, dz, e, tmin):
    """Axis-aligned cube of half-edge e centered at the local origin."""
    t0 = -1e300
    t1 = 1e300
    ax0 = -1
    ax1 = -1
    sg0 = 0.0
    sg1 = 0.0
    if dx != 0.0:
        ta = (-e - ox) / dx
        tb = (e - ox) / dx
        s = -1.0 if dx > 0.0 else 1.0
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
            ax0 = 0
            sg0 = s
        if tb < t1:
            t1 = tb
            ax1 = 0
            sg1 = -s
    elif ox < -e or ox > e:
        return -1.0, 0.0, 0.0, 1.0
    if dy != 0.0:
        ta = (-e - oy) / dy
        tb = (e - oy) / dy
        s = -1.0 if dy > 0.0 else 1.0
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
            ax0 = 1
            sg0 = s
        if tb < t1:
            t1 = tb
            ax1 = 1
            sg1 = -s
    elif oy < -e or oy > e:
        return -1.0, 0.0, 0.0, 1.0
    if dz != 0.0:
        ta = (-e - oz) / dz
        tb = (e - oz) / dz
        s = -1.0 if dz > 0.0 else 1.0
        if ta > tb:
            ta, tb = tb, ta
        if ta > t0:
            t0 = ta
            ax0 = 2
            sg0 = s
        if tb < t1:
            t1 = tb
            ax1 = 2
            sg1 = -s
    elif oz < -e or oz > e:
        return -1.0, 0.0, 0.0, 1.0
    if t0 > t1:
        return -1.0, 0.0, 0.0, 1.0
    if t0 > tmin and ax0 >= 0:
        t = t0
        axis = ax0
        sg = sg0
    elif t1 > tmin and ax1 >= 0:
        t = t1
        axis = ax1
        sg = sg1
    else:
        return -1.0, 0.0, 0.0, 1.0
    if axis == 0:
        return t, sg, 0.0, 0.0
    if axis == 1:
        return t, 0.0, sg, 0.0
    return t, 0.0, 0.0, sg


@njit(cache=True, inline="always")
def _isect_cylinder(ox, oy, oz, dx, dy, dz, r, hl, tmin):
    """Cylinder with axis along local x, radius r, caps at x = +-hl."""
    best = -1.0
    nx = 0.0
    ny = 0.0
    nz = 1.0
    a = dy * dy + dz * dz
    if a > 0.0:
        b = 2.0 * (oy * dy + oz * dz)
        c = oy * oy + oz * oz - r * r
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            t = (-b - sq) / (2.0 * a)
            if t > tmin:
                x = ox + t * dx
                if -hl <= x <= hl:
                    best = t
                    py = oy + t * dy
                    pz = oz + t * dz
                    inv = 1.0 / math.sqrt(py * py + pz * pz)
                    nx = 0.0
                    ny = py * inv
                    nz = pz * inv
            if best < 0.0:
                t = (-b + sq) / (2.0 * a)
                if t > tmin:
                    x = ox + t * dx
                    if -hl <= x <= hl:
                        best = t
                        py = oy + t * dy
                        pz = oz + t * dz
                        inv = 1.0 / math.sqrt(py * py + pz * pz)
                        nx = 0.0
                        ny = py * inv
                        nz = pz * inv
    if dx != 0.0:
        t = (-hl - ox) / dx
        if t > tmin and (best < 0.0 or t < best):
            y = oy + t * dy
            z = oz + t * dz
            if y * y + z * z <= r * r:
                best = t
                nx = -1.0
                ny = 0.0
                nz = 0.0
        t = (hl - ox) / dx
        if t > tmin and (best < 0.0 or t < best):
            y = oy + t * dy
            z = oz + t * dz
            if y * y + z * z <= r * r:
                best = t
                nx = 1.0
                ny = 0.0
                nz = 0.0
    return best, nx, ny, nz


@njit(cache=True, inline="always")
def _isect_cone(ox, oy, oz, dx, dy, dz, r, h, tmin):
    """Cone with base disk of radius r in the local z=0 plane, apex at z=h."""
    best = -1.0
    nx = 0.0
    ny = 0.0
    nz = 1.0
    k2 = (r / h) * (r / h)
    w0 = h - oz
    a = dx * dx + dy * dy - k2 * dz * dz
    b = 2.0 * (ox * dx + oy * dy + k2 * dz * w0)
    c = ox * ox + oy * oy - k2 * w0 * w0
    if abs(a) > 1e-14:
        disc = b * b - 4.0 * a * c
        if disc >= 0.0:
            sq = math.sqrt(disc)
            ta = (-b - sq) / (2.0 * a)
            tb = (-b + sq) / (2.0 * a)
            if ta > tb:
                ta, tb = tb, ta
            for ti in (ta, tb):
                if ti > tmin and (best < 0.0 or ti < best):
                    z = oz + ti * dz
                    if -1e-12 <= z <= h + 1e-12:
                        px = ox + ti * dx
                        py = oy + ti * dy
                        gz = k2 * (h - z)
                        gn = math.sqrt(px * px + py * py + gz * gz)
                        best = ti
                        if gn > 1e-30:
                            nx = px / gn
                            ny = py / gn
                            nz = gz / gn
                        else:
                            # apex: gradient vanishes, fall back to straight up
                            nx = 0.0
                            ny = 0.0
                            nz = 1.0
    elif abs(b) > 1e-14:
        ti = -c / b
        if ti > tmin:
            z = oz + ti * dz
            if -1e-12 <= z <= h + 1e-12:
                px = ox + ti * dx
                py = oy + ti * dy
                gz = k2 * (h - z)
                gn = math.sqrt(px * px + py * py + gz * gz)
                best = ti
                if gn > 1e-30:
                    nx = px / gn
                    ny = py / gn
                    nz = gz / gn
                else:
                    nx = 0.0
                    ny = 0.0
                    nz = 1.0
    if dz != 0.0:
        t = -oz / dz
        if t > tmin and (best < 0.0 or t < best):
            px = ox + t * dx
            py = oy + t * dy
            if px * px + py * py <= r * r:
                best = t
                nx = 0.0
                ny = 0.0
                nz = -1.0
    return best, nx, ny, nz


@njit(cache=True)
def target_hit(ox, oy, oz, dx, dy, dz, tshape, tdims, tpos, trot, tscale, tbound, tmin):
    """Nearest target intersection for a world ray with unit direction.

    Returns (t, index, nx, ny, nz) with the world-frame unit normal, or
    (-1.0, -1, ...) when no target is hit.  Targets are culled with a
    bounding-sphere test, then intersected in their local frame; the local
    normal maps back through the inverse-transpose of the pose transform.
    """
    n = tshape.shape[0]
    bt = -1.0
    bk = -1
    bnx = 0.0
    bny = 0.0
    bnz = 1.0
    for k in range(n):
        cx = tpos[k, 0] - ox
        cy = tpos[k, 1] - oy
        cz = tpos[k, 2] - oz
        proj = cx * dx + cy * dy + cz * dz
        rb = tbound[k]
        if proj < -rb:
            continue
        c2 = cx * cx + cy * cy + cz * cz
        if c2 - proj * proj > rb * rb + 1e-9:
            continue
        ca = trot[k, 0]
        sa = trot[k, 1]
        sxs = tscale[k, 0]
        sys = tscale[k, 1]
        szs = tscale[k, 2]
        rxo = ox - tpos[k, 0]
        ryo = oy - tpos[k, 1]
        rzo = oz - tpos[k, 2]
        lox = (ca * rxo + sa * ryo) / sxs
        loy = (-sa * rxo + ca * ryo) / sys
        loz = rzo / szs
        ldx = (ca * dx + sa * dy) / sxs
        ldy = (-sa * dx + ca * dy) / sys
        ldz = dz / szs
        shape = tshape[k]
        if shape == SHAPE_CUBE:
            t, nlx, nly, nlz = _isect_cube(lox, loy, loz, ldx, ldy, ldz,
                                           tdims[k, 0] * 0.5, tmin)
        elif shape == SHAPE_CYLINDER:
            t, nlx, nly, nlz = _isect_cylinder(lox, loy, loz, ldx, ldy, ldz,
                                               tdims[k, 0], tdims[k, 1] * 0.5, tmin)
        elif shape == SHAPE_CONE:
            t, nlx, nly, nlz = _isect_cone(lox, loy, loz, ldx, ldy, ldz,
                                           tdims[k, 0], tdims[k, 1], tmin)
        else:
            t, nlx, nly, nlz = _isect_sphere(lox, loy, loz, ldx, ldy, ldz,
                                             tdims[k, 0], tmin)
        if t > tmin and (bt < 0.0 or t < bt):
            axv = nlx / sxs
            ayv = nly / sys
            azv = nlz / szs
            wx = ca * axv - sa * ayv
            wy = sa * axv + ca * ayv
            wz = azv
            inv = 1.0 / math.sqrt(wx * wx + wy * wy + wz * wz)
            bt = t
            bk = k
            bnx = wx * inv
            bny = wy * inv
            bnz = wz * inv
    return bt, bk, bnx, bny, bnz


@njit(cache=True)
def scene_blocked(ox, oy, oz, dx, dy, dz, elev, czmax, x0, y0, h, zmin_g, zmax_g,
                  tshape, tdims, tpos, trot, tscale, tbound, tmin):
    """True when anything (terrain or a target) lies along the ray."""
    t, _, _, _ = hf_trace(ox, oy, oz, dx, dy, dz, elev, czmax,
                          x0, y0, h, zmin_g, zmax_g, tmin)
    if t > 0.0:
        return True
    t, _, _, _, _ = target_hit(ox, oy, oz, dx, dy, dz,
                               tshape, tdims, tpos, trot, tscale, tbound, tmin)
    return t > 0.0


@njit(cache=True, parallel=True)
def render_kernel(w, h_img, camx, camy, camz, rbx, rby, ubx, uby, tanh, tanv,
                  elev, czmax, x0, y0, hcell, zmin_g, zmax_g,
                  tshape, tdims, tpos, trot, tscale, tbound, talb,
                  lx, ly, lz, inten, lcr, lcg, lcb, amb, floor_alb):
    """Full-frame Lambertian render with one binary shadow ray per hit.

    Rows are distributed over threads.  Pixel (i, j) maps to normalized image
    coordinates u in [-1, 1] (left to right) and v in [1, -1] (top to bottom);
    the ray direction is u*tanh*right + v*tanv*up - z.  Pixels whose rays
    escape the scene stay black.
    """
    out = np.zeros((h_img, w, 3))
    for j in prange(h_img):
        v = 1.0 - 2.0 * (j + 0.5) / h_img
        for i in range(w):
            u = 2.0 * (i + 0.5) / w - 1.0
            dx = u * tanh * rbx + v * tanv * ubx
            dy = u * tanh * rby + v * tanv * uby
            dz = -1.0
            inv = 1.0 / math.sqrt(dx * dx + dy * dy + dz * dz)
            dx *= inv
            dy *= inv
            dz *= inv
            tf, cix, ciy, ctri = hf_trace(camx, camy, camz, dx, dy, dz, elev, czmax,
                                          x0, y0, hcell, zmin_g, zmax_g, TMIN_PRIMARY)
            tt, tk, wnx, wny, wnz = target_hit(camx, camy, camz, dx, dy, dz,
                                               tshape, tdims, tpos, trot, tscale,
                                               tbound, TMIN_PRIMARY)
            if tf < 0.0 and tt < 0.0:
                continue
            if tt > 0.0 and (tf < 0.0 or tt < tf):
                t = tt
                nx = wnx
                ny = wny
                nz = wnz
                alb = talb[tk]
            else:
                t = tf
                nx, ny, nz = hf_normal(elev, cix, ciy, hcell, ctri)
                alb = floor_alb
            hx = camx + t * dx
            hy = camy + t * dy
            hz = camz + t * dz
            ndl = nx * lx + ny * ly + nz * lz
            diff = 0.0
            if ndl > 0.0 and inten > 0.0:
                sox = hx + nx * SHADOW_OFFSET
                soy = hy + ny * SHADOW_OFFSET
                soz = hz + nz * SHADOW_OFFSET
                if not scene_blocked(sox, soy, soz, lx, ly, lz, elev, czmax,
                                     x0, y0, hcell, zmin_g, zmax_g,
                                     tshape, tdims, tpos, trot, tscale, tbound,
                                     TMIN_SHADOW):
                    diff = inten * ndl * alb
            base = amb * alb
            r = base + lcr * diff
            g = base + lcg * diff
            b = base + lcb * diff
            out[j, i, 0] = 1.0 if r > 1.0 else (0.0 if r < 0.0 else r)
            out[j, i, 1] = 1.0 if g > 1.0 else (0.0 if g < 0.0 else g)
            out[j, i, 2] = 1.0 if b > 1.0 else (0.0 if b < 0.0 else b)
    return out
