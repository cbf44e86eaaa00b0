#include "battta/corruption.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

#include "battta/errors.hpp"
#include "battta/rng.hpp"

namespace battta::corrupt {
namespace {

constexpr std::array<std::string_view, kNumKinds> kNames{
    "gaussian_noise", "shot_noise", "impulse_noise", "defocus_blur", "glass_blur",
    "motion_blur",    "zoom_blur",  "snow",          "frost",        "fog",
    "brightness",     "contrast",   "elastic",       "pixelate",     "jpeg",
};

// H x W x 3 working image with edge-clamped reads.
struct Image {
  std::size_t h, w;
  std::vector<double>& px;

  double& at(std::size_t y, std::size_t x, std::size_t c) { return px[(y * w + x) * 3 + c]; }
  double clamped(long y, long x, std::size_t c) const {
    y = std::clamp<long>(y, 0, static_cast<long>(h) - 1);
    x = std::clamp<long>(x, 0, static_cast<long>(w) - 1);
    return px[(static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)) * 3 + c];
  }
  double bilinear(double y, double x, std::size_t c) const {
    const double fy = std::floor(y), fx = std::floor(x);
    const double ty = y - fy, tx = x - fx;
    const auto y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
    return (1 - ty) * ((1 - tx) * clamped(y0, x0, c) + tx * clamped(y0, x0 + 1, c)) +
           ty * ((1 - tx) * clamped(y0 + 1, x0, c) + tx * clamped(y0 + 1, x0 + 1, c));
  }
};

struct Kernel {
  long radius;
  std::vector<double> weights;  // (2r+1)^2, normalised
};

std::vector<double> convolve(const Image& img, const Kernel& k) {
  std::vector<double> out(img.px.size());
  const long r = k.radius, side = 2 * r + 1;
  for (std::size_t y = 0; y < img.h; ++y)
    for (std::size_t x = 0; x < img.w; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (long dy = -r; dy <= r; ++dy)
          for (long dx = -r; dx <= r; ++dx)
            acc += k.weights[static_cast<std::size_t>((dy + r) * side + dx + r)] *
                   img.clamped(static_cast<long>(y) + dy, static_cast<long>(x) + dx, c);
        out[(y * img.w + x) * 3 + c] = acc;
      }
  return out;
}

Kernel normalised(long radius, std::vector<double> w) {
  double s = 0.0;
  for (double v : w) s += v;
  for (double& v : w) v /= s;
  return {radius, std::move(w)};
}

Kernel gaussian_kernel(double sigma) {
  const long r = std::max<long>(1, static_cast<long>(std::ceil(3.0 * sigma)));
  std::vector<double> w;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) w.push_back(std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
  return normalised(r, std::move(w));
}

// Disk of the given radius with 4x4 supersampled pixel coverage.
Kernel disk_kernel(double radius) {
  const long r = static_cast<long>(std::ceil(radius));
  std::vector<double> w;
  for (long dy = -r; dy <= r; ++dy)
    for (long dx = -r; dx <= r; ++dx) {
      int hits = 0;
      for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
          const double py = dy + (sy + 0.5) / 4.0 - 0.5, px = dx + (sx + 0.5) / 4.0 - 0.5;
          hits += py * py + px * px <= radius * radius ? 1 : 0;
        }
      w.push_back(hits / 16.0);
    }
  return normalised(r, std::move(w));
}

void clip01(std::vector<double>& px) {
  for (double& v : px) v = std::clamp(v, 0.0, 1.0);
}

// Splats `value` along a segment onto a single-channel layer.
void draw_line(std::vector<double>& layer, std::size_t h, std::size_t w, double y0, double x0, double angle,
               double length, double value) {
  const int steps = std::max(1, static_cast<int>(std::ceil(length * 3.0)));
  for (int s = 0; s <= steps; ++s) {
    const double t = length * s / steps;
    const double y = y0 + t * std::sin(angle), x = x0 + t * std::cos(angle);
    const long iy = std::lround(y), ix = std::lround(x);
    if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
    double& cell = layer[static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix)];
    cell = std::max(cell, value);
  }
}

void rgb_to_hsv(double r, double g, double b, double& h, double& s, double& v) {
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  v = mx;
  s = mx > 0.0 ? d / mx : 0.0;
  if (d == 0.0) {
    h = 0.0;
  } else if (mx == r) {
    h = std::fmod((g - b) / d, 6.0);
  } else if (mx == g) {
    h = (b - r) / d + 2.0;
  } else {
    h = (r - g) / d + 4.0;
  }
  if (h < 0.0) h += 6.0;
}

void hsv_to_rgb(double h, double s, double v, double& r, double& g, double& b) {
  const double c = v * s, x = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0)), m = v - c;
  const int sector = static_cast<int>(h) % 6;
  double rr = 0, gg = 0, bb = 0;
  switch (sector) {
    case 0: rr = c, gg = x; break;
    case 1: rr = x, gg = c; break;
    case 2: gg = c, bb = x; break;
    case 3: gg = x, bb = c; break;
    case 4: rr = x, bb = c; break;
    default: rr = c, bb = x; break;
  }
  r = rr + m, g = gg + m, b = bb + m;
}

// Value noise in [0, 1]: random lattice values, bilinearly interpolated,
// summed over octaves with halving amplitude.
std::vector<double> value_noise(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> field(h * w, 0.0);
  double amp = 1.0, total = 0.0;
  for (std::size_t cells : {2, 4, 8}) {
    std::vector<double> lattice((cells + 1) * (cells + 1));
    for (double& v : lattice) v = u(rng);
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double gy = static_cast<double>(y) * cells / h, gx = static_cast<double>(x) * cells / w;
        const auto iy = static_cast<std::size_t>(gy), ix = static_cast<std::size_t>(gx);
        const double ty = gy - iy, tx = gx - ix;
        auto L = [&](std::size_t a, std::size_t b) { return lattice[a * (cells + 1) + b]; };
        field[y * w + x] += amp * ((1 - ty) * ((1 - tx) * L(iy, ix) + tx * L(iy, ix + 1)) +
                                   ty * ((1 - tx) * L(iy + 1, ix) + tx * L(iy + 1, ix + 1)));
      }
    total += amp;
    amp *= 0.5;
  }
  for (double& v : field) v /= total;
  return field;
}

// Standard JPEG luminance quantisation table.
constexpr std::array<int, 64> kLumaQuant{16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
                                         14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
                                         18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
                                         49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

void jpeg_block_roundtrip(std::array<double, 64>& block, const std::array<double, 64>& quant) {
  static const auto basis = [] {
    std::array<double, 64> b{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        b[u * 8 + x] = (u == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0)) *
                       std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
    return b;
  }();
  std::array<double, 64> coef{}, tmp{};
  // Separable forward DCT-II: rows then columns.
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int x = 0; x < 8; ++x) s += basis[u * 8 + x] * block[y * 8 + x];
      tmp[y * 8 + u] = s;
    }
  for (int v = 0; v < 8; ++v)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int y = 0; y < 8; ++y) s += basis[v * 8 + y] * tmp[y * 8 + u];
      coef[v * 8 + u] = std::round(s / quant[v * 8 + u]) * quant[v * 8 + u];
    }
  for (int y = 0; y < 8; ++y)
    for (int u = 0; u < 8; ++u) {
      double s = 0.0;
      for (int v = 0; v < 8; ++v) s += basis[v * 8 + y] * coef[v * 8 + u];
      tmp[y * 8 + u] = s;
    }
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int u = 0; u < 8; ++u) s += basis[u * 8 + x] * tmp[y * 8 + u];
      block[y * 8 + x] = s;
    }
}

void apply(Image img, Kind kind, const std::vector<double>& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::size_t h = img.h, w = img.w;
  auto& px = img.px;
  switch (kind) {
    case Kind::gaussian_noise: {
      std::normal_distribution<double> n(0.0, p[0]);
      for (double& v : px) v += n(rng);
      break;
    }
    case Kind::shot_noise: {
      for (double& v : px) {
        std::poisson_distribution<long> pd(std::max(v, 0.0) * p[0]);
        v = static_cast<double>(pd(rng)) / p[0];
      }
      break;
    }
    case Kind::impulse_noise: {
      for (double& v : px) {
        const double r = u(rng);
        if (r < p[0] / 2.0) {
          v = 0.0;
        } else if (r < p[0]) {
          v = 1.0;
        }
      }
      break;
    }
    case Kind::defocus_blur:
      px = convolve(img, disk_kernel(p[0]));
      break;
    case Kind::glass_blur: {
      px = convolve(img, gaussian_kernel(p[0]));
      // Two passes of neighbour swaps; each pixel swaps with probability swap_rate.
      constexpr long delta = 1;
      std::uniform_int_distribution<long> d(-delta, delta);
      for (int it = 0; it < 2; ++it)
        for (long y = static_cast<long>(h) - 1 - delta; y >= delta; --y)
          for (long x = static_cast<long>(w) - 1 - delta; x >= delta; --x) {
            const long ny = y + d(rng), nx = x + d(rng);
            if (u(rng) >= p[1]) continue;
            for (std::size_t c = 0; c < 3; ++c)
              std::swap(img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c),
                        img.at(static_cast<std::size_t>(ny), static_cast<std::size_t>(nx), c));
          }
      px = convolve(img, gaussian_kernel(p[0]));
      break;
    }
    case Kind::motion_blur: {
      const double length = p[0];
      const double angle = (u(rng) - 0.5) * std::numbers::pi / 2.0;
      const int taps = std::max(2, static_cast<int>(std::ceil(length * 2.0)) + 1);
      std::vector<double> out(px.size(), 0.0);
      for (int t = 0; t < taps; ++t) {
        const double s = length * t / (taps - 1);
        const double oy = s * std::sin(angle), ox = s * std::cos(angle);
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              out[(y * w + x) * 3 + c] += img.bilinear(y - oy, x - ox, c) / taps;
      }
      px = std::move(out);
      break;
    }
    case Kind::zoom_blur: {
      const double max_zoom = p[0], step = 0.02;
      std::vector<double> out(px);
      int copies = 1;
      const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
      for (double z = 1.0 + step; z <= max_zoom + 1e-9; z += step, ++copies)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
              out[(y * w + x) * 3 + c] += img.bilinear(cy + (y - cy) / z, cx + (x - cx) / z, c);
      for (double& v : out) v /= copies;
      px = std::move(out);
      break;
    }
    case Kind::snow: {
      const double density = p[0], length = p[1], whiten = p[2];
      for (std::size_t i = 0; i < h * w; ++i) {
        const double gray = 0.299 * px[i * 3] + 0.587 * px[i * 3 + 1] + 0.114 * px[i * 3 + 2];
        for (std::size_t c = 0; c < 3; ++c) {
          double& v = px[i * 3 + c];
          v = (1.0 - whiten) * v + whiten * std::max(v, gray * 1.5 + 0.5);
        }
      }
      std::vector<double> layer(h * w, 0.0);
      const double wind = std::numbers::pi / 2.0 + (u(rng) - 0.5) * 0.8;
      const auto flakes = static_cast<std::size_t>(std::round(density * h * w));
      for (std::size_t f = 0; f < flakes; ++f)
        draw_line(layer, h, w, u(rng) * h, u(rng) * w, wind, length * (0.5 + u(rng)), 0.7 + 0.3 * u(rng));
      for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < 3; ++c) px[i * 3 + c] += layer[i];
      break;
    }
    case Kind::frost: {
      const double keep = p[0], blend = p[1];
      std::vector<double> mask(h * w, 0.0);
      const std::size_t seeds = std::max<std::size_t>(3, h * w / 12);
      for (std::size_t s = 0; s < seeds; ++s) {
        const double y = u(rng) * h, x = u(rng) * w;
        const int rays = 3 + static_cast<int>(u(rng) * 4);
        for (int r = 0; r < rays; ++r)
          draw_line(mask, h, w, y, x, u(rng) * 2.0 * std::numbers::pi, 1.0 + u(rng) * 3.0, 0.5 + 0.5 * u(rng));
      }
      // Soften the crystal edges and add a haze floor.
      std::vector<double> soft(h * w);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          double acc = 0.0, n = 0.0;
          for (long dy = -1; dy <= 1; ++dy)
            for (long dx = -1; dx <= 1; ++dx) {
              const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
              if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
              const double wgt = dy == 0 && dx == 0 ? 4.0 : 1.0;
              acc += wgt * mask[static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx)];
              n += wgt;
            }
          soft[y * w + x] = 0.3 + 0.7 * acc / n;
        }
      constexpr std::array<double, 3> tint{0.85, 0.92, 1.0};
      for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < 3; ++c) px[i * 3 + c] = keep * px[i * 3 + c] + blend * soft[i] * tint[c];
      break;
    }
    case Kind::fog: {
      const double strength = p[0];
      auto field = value_noise(h, w, rng);
      double mx = 0.0;
      for (double v : px) mx = std::max(mx, v);
      for (std::size_t i = 0; i < h * w; ++i)
        for (std::size_t c = 0; c < 3; ++c)
          px[i * 3 + c] = (px[i * 3 + c] + strength * field[i]) * mx / (mx + strength);
      break;
    }
    case Kind::brightness: {
      for (std::size_t i = 0; i < h * w; ++i) {
        double hh, s, v;
        rgb_to_hsv(px[i * 3], px[i * 3 + 1], px[i * 3 + 2], hh, s, v);
        v = std::clamp(v + p[0], 0.0, 1.0);
        hsv_to_rgb(hh, s, v, px[i * 3], px[i * 3 + 1], px[i * 3 + 2]);
      }
      break;
    }
    case Kind::contrast: {
      double mean = 0.0;
      for (double v : px) mean += v;
      mean /= static_cast<double>(px.size());
      for (double& v : px) v = (v - mean) * p[0] + mean;
      break;
    }
    case Kind::elastic: {
      const double alpha = p[0], sigma = p[1];
      std::vector<double> field(h * w * 2);
      for (double& v : field) v = u(rng) * 2.0 - 1.0;
      // Smooth each displacement component, then rescale so the peak equals alpha.
      std::vector<double> dy(h * w), dx(h * w);
      for (std::size_t comp = 0; comp < 2; ++comp) {
        std::vector<double> rgb(h * w * 3);
        for (std::size_t i = 0; i < h * w; ++i) rgb[i * 3] = rgb[i * 3 + 1] = rgb[i * 3 + 2] = field[i * 2 + comp];
        auto smooth = convolve(Image{h, w, rgb}, gaussian_kernel(sigma));
        double peak = 1e-12;
        for (std::size_t i = 0; i < h * w; ++i) peak = std::max(peak, std::abs(smooth[i * 3]));
        auto& dst = comp == 0 ? dy : dx;
        for (std::size_t i = 0; i < h * w; ++i) dst[i] = alpha * smooth[i * 3] / peak;
      }
      std::vector<double> out(px.size());
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            out[(y * w + x) * 3 + c] = img.bilinear(y + dy[y * w + x], x + dx[y * w + x], c);
      px = std::move(out);
      break;
    }
    case Kind::pixelate: {
      const double factor = p[0];
      const auto ny = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(h / factor)));
      const auto nx = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(w / factor)));
      std::vector<double> cells(ny * nx * 3, 0.0), count(ny * nx, 0.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t cell = (y * ny / h) * nx + x * nx / w;
          count[cell] += 1.0;
          for (std::size_t c = 0; c < 3; ++c) cells[cell * 3 + c] += img.at(y, x, c);
        }
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          const std::size_t cell = (y * ny / h) * nx + x * nx / w;
          for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = cells[cell * 3 + c] / count[cell];
        }
      break;
    }
    case Kind::jpeg: {
      const double quality = p[0];
      const double scale = quality < 50.0 ? 5000.0 / quality : 200.0 - 2.0 * quality;
      std::array<double, 64> quant{};
      for (std::size_t i = 0; i < 64; ++i) quant[i] = std::clamp(std::floor((kLumaQuant[i] * scale + 50.0) / 100.0), 1.0, 255.0);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t by = 0; by < h; by += 8)
          for (std::size_t bx = 0; bx < w; bx += 8) {
            std::array<double, 64> block{};
            for (std::size_t y = 0; y < 8; ++y)
              for (std::size_t x = 0; x < 8; ++x)
                block[y * 8 + x] = std::round(img.clamped(static_cast<long>(by + y), static_cast<long>(bx + x), c) * 255.0) - 128.0;
            jpeg_block_roundtrip(block, quant);
            for (std::size_t y = 0; y < 8 && by + y < h; ++y)
              for (std::size_t x = 0; x < 8 && bx + x < w; ++x)
                img.at(by + y, bx + x, c) = std::clamp(std::round(block[y * 8 + x] + 128.0), 0.0, 255.0) / 255.0;
          }
      break;
    }
  }
  clip01(px);
}

std::map<Kind, SeverityTable> build_tables() {
  std::map<Kind, SeverityTable> t;
  auto row = [](std::initializer_list<std::initializer_list<double>> rows) {
    std::array<std::vector<double>, kMaxSeverity> out;
    std::size_t i = 0;
    for (auto r : rows) out[i++] = r;
    return out;
  };
  t[Kind::gaussian_noise] = {{"sigma"}, {true}, row({{0.04}, {0.06}, {0.08}, {0.12}, {0.18}})};
  t[Kind::shot_noise] = {{"photons"}, {false}, row({{150}, {80}, {40}, {20}, {10}})};
  t[Kind::impulse_noise] = {{"rate"}, {true}, row({{0.01}, {0.02}, {0.04}, {0.07}, {0.11}})};
  t[Kind::defocus_blur] = {{"radius"}, {true}, row({{0.6}, {0.9}, {1.2}, {1.6}, {2.0}})};
  t[Kind::glass_blur] = {{"sigma", "swap_rate"},
                         {true, true},
                         row({{0.1, 0.1}, {0.2, 0.2}, {0.3, 0.3}, {0.4, 0.45}, {0.5, 0.6}})};
  t[Kind::motion_blur] = {{"length"}, {true}, row({{1.0}, {1.5}, {2.0}, {3.0}, {4.0}})};
  t[Kind::zoom_blur] = {{"max_zoom"}, {true}, row({{1.06}, {1.11}, {1.16}, {1.21}, {1.26}})};
  t[Kind::snow] = {{"density", "length", "whiten"},
                   {true, true, true},
                   row({{0.01, 1.0, 0.04}, {0.02, 1.5, 0.08}, {0.03, 2.0, 0.12}, {0.05, 2.5, 0.16}, {0.07, 3.0, 0.20}})};
  t[Kind::frost] = {{"keep", "blend"},
                    {false, true},
                    row({{1.0, 0.2}, {0.9, 0.3}, {0.85, 0.4}, {0.8, 0.5}, {0.75, 0.6}})};
  t[Kind::fog] = {{"strength"}, {true}, row({{0.3}, {0.45}, {0.6}, {0.8}, {1.0}})};
  t[Kind::brightness] = {{"shift"}, {true}, row({{0.05}, {0.1}, {0.15}, {0.22}, {0.3}})};
  t[Kind::contrast] = {{"factor"}, {false}, row({{0.75}, {0.6}, {0.45}, {0.3}, {0.2}})};
  t[Kind::elastic] = {{"alpha", "sigma"}, {true, false}, row({{0.6, 2.0}, {1.0, 1.8}, {1.4, 1.6}, {1.8, 1.4}, {2.3, 1.2}})};
  t[Kind::pixelate] = {{"factor"}, {true}, row({{1.33}, {1.6}, {2.0}, {3.2}, {4.0}})};
  t[Kind::jpeg] = {{"quality"}, {false}, row({{60}, {40}, {25}, {15}, {8}})};
  return t;
}

}  // namespace

const std::array<Kind, kNumKinds>& all_kinds() {
  static const std::array<Kind, kNumKinds> kinds = [] {
    std::array<Kind, kNumKinds> k{};
    for (std::size_t i = 0; i < kNumKinds; ++i) k[i] = static_cast<Kind>(i);
    return k;
  }();
  return kinds;
}

std::string_view name(Kind kind) { return kNames[static_cast<std::size_t>(kind)]; }

Kind parse_kind(std::string_view n) {
  for (std::size_t i = 0; i < kNumKinds; ++i)
    if (kNames[i] == n) return static_cast<Kind>(i);
  throw ConfigError("unknown corruption kind '" + std::string(n) + "'");
}

const SeverityTable& severity_table(Kind kind) {
  static const auto tables = build_tables();
  return tables.at(kind);
}

CorruptionSpec CorruptionSpec::make(Kind kind, int severity) {
  if (severity < 0 || severity > kMaxSeverity) {
    throw ConfigError("severity must be in 0..5, got " + std::to_string(severity));
  }
  CorruptionSpec spec{kind, severity, {}};
  if (severity > 0) spec.params = severity_table(kind).rows[static_cast<std::size_t>(severity - 1)];
  return spec;
}

std::string CorruptionSpec::label() const { return std::string(name(kind)) + "-" + std::to_string(severity); }

void corrupt_image(std::vector<double>& img, std::size_t height, std::size_t width, const CorruptionSpec& spec,
                   std::uint64_t image_seed) {
  if (spec.severity == 0) return;
  if (spec.params.size() != severity_table(spec.kind).columns.size()) {
    throw ConfigError("corruption " + spec.label() + " expects " +
                      std::to_string(severity_table(spec.kind).columns.size()) + " parameters");
  }
  std::mt19937_64 rng(image_seed);
  apply(Image{height, width, img}, spec.kind, spec.params, rng);
}

ImageSet corrupt(const ImageSet& set, const CorruptionSpec& spec, std::uint64_t seed) {
  ImageSet out;
  out.labels = set.labels;
  out.class_names = set.class_names;
  if (spec.severity == 0) {
    out.images = set.images.detach();
    return out;
  }
  const std::size_t h = set.height(), w = set.width(), per = h * w * 3;
  std::vector<double> data(set.images.data().begin(), set.images.data().end());
  std::vector<double> img(per);
  for (std::size_t i = 0; i < set.size(); ++i) {
    std::copy_n(data.begin() + static_cast<long>(i * per), per, img.begin());
    corrupt_image(img, h, w, spec,
                  derive_seed(seed, {static_cast<std::uint64_t>(spec.kind), static_cast<std::uint64_t>(spec.severity), i}));
    std::copy(img.begin(), img.end(), data.begin() + static_cast<long>(i * per));
  }
  out.images = Tensor(set.images.shape(), std::move(data));
  return out;
}

}  // namespace battta::corrupt
