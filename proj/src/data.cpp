#include "deeva/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "deeva/rng.hpp"
#include "json.hpp"

namespace deeva {

namespace fs = std::filesystem;
using nlohmann::json;

const std::array<const char*, 5> kObjectClasses = {"worker", "hardhat", "vehicle", "excavator",
                                                   "barrier"};
const std::array<const char*, 3> kSceneClasses = {"empty", "workers_present",
                                                  "unattended_equipment"};

int object_class_id(const std::string& name) {
  for (size_t i = 0; i < kObjectClasses.size(); ++i)
    if (name == kObjectClasses[i]) return static_cast<int>(i);
  return -1;
}

int scene_class_id(const std::string& name) {
  for (size_t i = 0; i < kSceneClasses.size(); ++i)
    if (name == kSceneClasses[i]) return static_cast<int>(i);
  return -1;
}

void Annotation::validate() const {
  if (width <= 0 || height <= 0) throw std::invalid_argument("annotation extents must be positive");
  if (scene_class_id(scene_label) < 0) {
    throw std::invalid_argument("unknown scene label: " + scene_label);
  }
  for (const auto& o : objects) {
    if (object_class_id(o.cls) < 0) throw std::invalid_argument("unknown object class: " + o.cls);
    if (!o.box.valid()) throw std::invalid_argument("degenerate box for " + o.cls);
    if (o.box.x1 < 0 || o.box.y1 < 0 || o.box.x2 > width || o.box.y2 > height) {
      throw std::invalid_argument("box outside image for " + o.cls);
    }
  }
}

std::string scene_label_for(const std::vector<AnnotationObject>& objects) {
  if (objects.empty()) return kSceneClasses[0];
  bool worker = false, equipment = false;
  for (const auto& o : objects) {
    if (o.cls == "worker") worker = true;
    if (o.cls == "vehicle" || o.cls == "excavator") equipment = true;
  }
  if (equipment && !worker) return kSceneClasses[2];
  return kSceneClasses[1];
}

void SceneSpec::validate() const {
  if (size <= 0 || (size & (size - 1)) != 0) throw std::invalid_argument("scene size must be a power of two");
  if (min_objects < 0 || max_objects < min_objects) throw std::invalid_argument("bad object count range");
  if (brightness_hi < brightness_lo || brightness_lo <= 0) throw std::invalid_argument("bad brightness range");
  if (noise_amplitude < 0) throw std::invalid_argument("noise amplitude must be >= 0");
  if (max_pairwise_iou < 0 || max_pairwise_iou > 1) throw std::invalid_argument("bad overlap bound");
  double total = 0.0;
  for (const auto& [name, w] : class_weights) {
    if (object_class_id(name) < 0) throw std::invalid_argument("unknown class in mix: " + name);
    if (w < 0) throw std::invalid_argument("negative class weight");
    total += w;
  }
  if (total <= 0.0) throw std::invalid_argument("class mix sums to zero");
}

// ---------------------------------------------------------------------------
// rasterizer

namespace {

struct Canvas {
  int size;
  std::vector<double> rgb;       // 3 planes, [3,S,S]
  std::vector<uint8_t> mask;     // scratch mask of the object being drawn

  explicit Canvas(int s) : size(s), rgb(3ull * s * s, 0.0), mask(static_cast<size_t>(s) * s, 0) {}

  void put(int x, int y, double r, double g, double b) {
    if (x < 0 || y < 0 || x >= size || y >= size) return;
    const size_t i = static_cast<size_t>(y) * size + x;
    rgb[i] = r;
    rgb[i + static_cast<size_t>(size) * size] = g;
    rgb[i + 2ull * size * size] = b;
    mask[i] = 1;
  }
};

struct Rgb {
  double r, g, b;
};

void fill_rect(Canvas& c, double x1, double y1, double x2, double y2, Rgb col) {
  const int ax = std::max(0, static_cast<int>(std::floor(x1)));
  const int ay = std::max(0, static_cast<int>(std::floor(y1)));
  const int bx = std::min(c.size, static_cast<int>(std::ceil(x2)));
  const int by = std::min(c.size, static_cast<int>(std::ceil(y2)));
  for (int y = ay; y < by; ++y)
    for (int x = ax; x < bx; ++x) c.put(x, y, col.r, col.g, col.b);
}

void fill_disc(Canvas& c, double cx, double cy, double rad, Rgb col) {
  const int ax = static_cast<int>(std::floor(cx - rad)), bx = static_cast<int>(std::ceil(cx + rad));
  const int ay = static_cast<int>(std::floor(cy - rad)), by = static_cast<int>(std::ceil(cy + rad));
  for (int y = ay; y <= by; ++y) {
    for (int x = ax; x <= bx; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dx * dx + dy * dy <= rad * rad) c.put(x, y, col.r, col.g, col.b);
    }
  }
}

void fill_half_disc_up(Canvas& c, double cx, double cy, double rad, Rgb col) {
  const int ax = static_cast<int>(std::floor(cx - rad)), bx = static_cast<int>(std::ceil(cx + rad));
  const int ay = static_cast<int>(std::floor(cy - rad)), by = static_cast<int>(std::ceil(cy));
  for (int y = ay; y <= by; ++y) {
    for (int x = ax; x <= bx; ++x) {
      const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
      if (dy <= 0 && dx * dx + dy * dy <= rad * rad) c.put(x, y, col.r, col.g, col.b);
    }
  }
}

void fill_segment(Canvas& c, double x1, double y1, double x2, double y2, double thick, Rgb col) {
  const double r = thick * 0.5;
  const int ax = static_cast<int>(std::floor(std::min(x1, x2) - r));
  const int bx = static_cast<int>(std::ceil(std::max(x1, x2) + r));
  const int ay = static_cast<int>(std::floor(std::min(y1, y2) - r));
  const int by = static_cast<int>(std::ceil(std::max(y1, y2) + r));
  const double vx = x2 - x1, vy = y2 - y1;
  const double len2 = std::max(vx * vx + vy * vy, 1e-9);
  for (int y = ay; y <= by; ++y) {
    for (int x = ax; x <= bx; ++x) {
      const double px = x + 0.5 - x1, py = y + 0.5 - y1;
      double t = (px * vx + py * vy) / len2;
      t = std::min(1.0, std::max(0.0, t));
      const double dx = px - t * vx, dy = py - t * vy;
      if (dx * dx + dy * dy <= r * r) c.put(x, y, col.r, col.g, col.b);
    }
  }
}

Rgb jitter(Rng& rng, Rgb base, double amt = 0.05) {
  auto j = [&](double v) { return std::min(1.0, std::max(0.0, v + rng.uniform(-amt, amt))); };
  return {j(base.r), j(base.g), j(base.b)};
}

struct Placed {
  std::string cls;
  Box box;
};

// Each draw paints into a fresh mask; the recorded box is the tight bound of
// the painted pixels, so the label-soundness property holds by construction.
Box tight_box(const Canvas& c) {
  int minx = c.size, miny = c.size, maxx = -1, maxy = -1;
  for (int y = 0; y < c.size; ++y) {
    for (int x = 0; x < c.size; ++x) {
      if (!c.mask[static_cast<size_t>(y) * c.size + x]) continue;
      minx = std::min(minx, x);
      maxx = std::max(maxx, x);
      miny = std::min(miny, y);
      maxy = std::max(maxy, y);
    }
  }
  if (maxx < 0) return {0, 0, 0, 0};
  return {static_cast<double>(minx), static_cast<double>(miny), static_cast<double>(maxx + 1),
          static_cast<double>(maxy + 1)};
}

void draw_worker(Canvas& c, Rng& rng, double cx, double cy, double h, bool with_hat,
                 std::vector<Placed>& out) {
  const double body_w = h * 0.42;
  const Rgb vest = jitter(rng, {0.95, 0.45, 0.08});
  const Rgb skin = jitter(rng, {0.87, 0.72, 0.58}, 0.03);
  const double head_r = h * 0.16;
  const double body_top = cy - h * 0.5 + 2.0 * head_r;

  std::fill(c.mask.begin(), c.mask.end(), 0);
  // body capsule: rect plus rounded ends
  fill_rect(c, cx - body_w * 0.5, body_top, cx + body_w * 0.5, cy + h * 0.5 - body_w * 0.25, vest);
  fill_disc(c, cx, cy + h * 0.5 - body_w * 0.25, body_w * 0.5, vest);
  fill_disc(c, cx, body_top, body_w * 0.5, vest);
  fill_disc(c, cx, cy - h * 0.5 + head_r, head_r, skin);
  out.push_back({"worker", tight_box(c)});

  if (with_hat) {
    std::fill(c.mask.begin(), c.mask.end(), 0);
    const Rgb hat = jitter(rng, {1.0, 0.92, 0.05}, 0.04);
    fill_half_disc_up(c, cx, cy - h * 0.5 + head_r, head_r * 1.25, hat);
    out.push_back({"hardhat", tight_box(c)});
  }
}

void draw_vehicle(Canvas& c, Rng& rng, double cx, double cy, double w, std::vector<Placed>& out) {
  const double h = w * 0.5;
  const Rgb body = jitter(rng, {0.85, 0.78, 0.12});
  const Rgb cab = jitter(rng, {0.35, 0.55, 0.8}, 0.04);
  const Rgb wheel = {0.08, 0.08, 0.1};
  std::fill(c.mask.begin(), c.mask.end(), 0);
  fill_rect(c, cx - w * 0.5, cy - h * 0.25, cx + w * 0.5, cy + h * 0.3, body);
  fill_rect(c, cx - w * 0.15, cy - h * 0.5, cx + w * 0.45, cy - h * 0.25, cab);
  const double wr = h * 0.22;
  fill_disc(c, cx - w * 0.3, cy + h * 0.3, wr, wheel);
  fill_disc(c, cx + w * 0.3, cy + h * 0.3, wr, wheel);
  out.push_back({"vehicle", tight_box(c)});
}

void draw_excavator(Canvas& c, Rng& rng, double cx, double cy, double w, std::vector<Placed>& out) {
  const double h = w * 0.8;
  const Rgb body = jitter(rng, {0.82, 0.3, 0.05});
  const Rgb arm = {0.25, 0.22, 0.2};
  const Rgb track = {0.12, 0.12, 0.12};
  std::fill(c.mask.begin(), c.mask.end(), 0);
  fill_rect(c, cx - w * 0.45, cy, cx + w * 0.15, cy + h * 0.35, body);
  fill_rect(c, cx - w * 0.5, cy + h * 0.35, cx + w * 0.2, cy + h * 0.5, track);
  // articulated arm: up then down to the bucket
  const double ex = cx + w * 0.1, ey = cy + h * 0.05;
  const double jx = cx + w * 0.32, jy = cy - h * 0.45;
  const double bx = cx + w * 0.5, by = cy - h * 0.05;
  fill_segment(c, ex, ey, jx, jy, w * 0.09, arm);
  fill_segment(c, jx, jy, bx, by, w * 0.07, arm);
  fill_disc(c, bx, by, w * 0.07, arm);
  out.push_back({"excavator", tight_box(c)});
}

void draw_barrier(Canvas& c, Rng& rng, double cx, double cy, double w, std::vector<Placed>& out) {
  const double h = std::max(4.0, w * 0.18);
  const Rgb red = jitter(rng, {0.85, 0.08, 0.08}, 0.03);
  const Rgb white = {0.93, 0.93, 0.9};
  std::fill(c.mask.begin(), c.mask.end(), 0);
  const double stripe = std::max(3.0, w / 6.0);
  for (int s = 0;; ++s) {
    const double x0 = cx - w * 0.5 + s * stripe;
    if (x0 >= cx + w * 0.5) break;
    fill_rect(c, x0, cy - h * 0.5, std::min(x0 + stripe, cx + w * 0.5), cy + h * 0.5,
              (s % 2 == 0) ? red : white);
  }
  out.push_back({"barrier", tight_box(c)});
}

}  // namespace

std::pair<Tensor, Annotation> synth_scene(const SceneSpec& spec, int index) {
  spec.validate();
  Rng rng(Rng::mix(spec.seed, static_cast<uint64_t>(index)));
  const int s = spec.size;
  Canvas canvas(s);

  // textured ground: vertical gradient plus hash noise
  for (int y = 0; y < s; ++y) {
    const double grad = 0.06 * (static_cast<double>(y) / s - 0.5);
    for (int x = 0; x < s; ++x) {
      const double n = (static_cast<double>(Rng::mix(Rng::mix(spec.seed, static_cast<uint64_t>(index)),
                                                     static_cast<uint64_t>(y) * s + x) >> 40) /
                        static_cast<double>(1 << 24) - 0.5) * 0.06;
      const size_t i = static_cast<size_t>(y) * s + x;
      canvas.rgb[i] = 0.46 + grad + n;
      canvas.rgb[i + static_cast<size_t>(s) * s] = 0.43 + grad + n;
      canvas.rgb[i + 2ull * s * s] = 0.38 + grad + n * 0.8;
    }
  }

  // class draw order by cumulative weight
  std::vector<std::pair<std::string, double>> mix;
  double total_w = 0.0;
  for (const char* name : kObjectClasses) {
    auto it = spec.class_weights.find(name);
    if (it != spec.class_weights.end() && it->second > 0.0) {
      total_w += it->second;
      mix.emplace_back(name, total_w);
    }
  }

  const int want = static_cast<int>(rng.uniform_int(spec.min_objects, spec.max_objects));
  std::vector<Placed> placed;
  std::vector<Box> occupied;
  for (int k = 0; k < want; ++k) {
    bool drawn = false;
    for (int attempt = 0; attempt < 24 && !drawn; ++attempt) {
      const double pick = rng.uniform() * total_w;
      std::string cls = mix.empty() ? "worker" : mix.back().first;
      for (const auto& [name, cum] : mix) {
        if (pick <= cum) {
          cls = name;
          break;
        }
      }
      // nominal size per class, scaled to the canvas
      const double u = rng.uniform();
      double ow, oh;
      if (cls == "worker" || cls == "hardhat") {
        oh = s * (0.22 + 0.2 * u);
        ow = oh * 0.5;
      } else if (cls == "vehicle") {
        ow = s * (0.26 + 0.24 * u);
        oh = ow * 0.55;
      } else if (cls == "excavator") {
        ow = s * (0.3 + 0.26 * u);
        oh = ow * 0.95;
      } else {  // barrier
        ow = s * (0.3 + 0.25 * u);
        oh = std::max(6.0, ow * 0.2);
      }
      const double margin = 2.0;
      const double lox = margin + ow * 0.5, hix = s - margin - ow * 0.5;
      const double loy = margin + oh * 0.5, hiy = s - margin - oh * 0.5;
      if (lox >= hix || loy >= hiy) continue;
      const double cx = rng.uniform(lox, hix);
      const double cy = rng.uniform(loy, hiy);
      const Box proposal{cx - ow * 0.5, cy - oh * 0.5, cx + ow * 0.5, cy + oh * 0.5};
      bool ok = true;
      for (const Box& b : occupied) {
        if (iou(proposal, b) > spec.max_pairwise_iou) {
          ok = false;
          break;
        }
      }
      if (!ok) continue;
      const size_t before = placed.size();
      if (cls == "worker") {
        draw_worker(canvas, rng, cx, cy, oh, false, placed);
      } else if (cls == "hardhat") {
        draw_worker(canvas, rng, cx, cy, oh, true, placed);
      } else if (cls == "vehicle") {
        draw_vehicle(canvas, rng, cx, cy, ow, placed);
      } else if (cls == "excavator") {
        draw_excavator(canvas, rng, cx, cy, ow, placed);
      } else {
        draw_barrier(canvas, rng, cx, cy, ow, placed);
      }
      for (size_t i = before; i < placed.size(); ++i) occupied.push_back(placed[i].box);
      drawn = true;
    }
    // placement failure after bounded retries: emit the scene with fewer objects
  }

  // per-scene brightness and additive noise
  const double bright = rng.uniform(spec.brightness_lo, spec.brightness_hi);
  for (size_t i = 0; i < canvas.rgb.size(); ++i) {
    double v = canvas.rgb[i] * bright;
    if (spec.noise_amplitude > 0.0) v += rng.uniform(-spec.noise_amplitude, spec.noise_amplitude);
    canvas.rgb[i] = std::min(1.0, std::max(0.0, v));
  }

  Annotation ann;
  char buf[32];
  std::snprintf(buf, sizeof(buf), "scene_%06d.ppm", index);
  ann.image = buf;
  ann.width = s;
  ann.height = s;
  for (const auto& p : placed) {
    if (!p.box.valid()) continue;
    ann.objects.push_back({p.cls, p.box});
  }
  ann.scene_label = scene_label_for(ann.objects);
  ann.validate();
  return {Tensor({3, s, s}, std::move(canvas.rgb)), std::move(ann)};
}

// ---------------------------------------------------------------------------
// dataset files

namespace {

json annotation_to_json(const Annotation& a) {
  json objs = json::array();
  for (const auto& o : a.objects) {
    objs.push_back({{"class", o.cls}, {"bbox", {o.box.x1, o.box.y1, o.box.x2, o.box.y2}}});
  }
  return json{{"image", a.image},
              {"width", a.width},
              {"height", a.height},
              {"objects", objs},
              {"scene_label", a.scene_label}};
}

Annotation annotation_from_json(const json& j) {
  Annotation a;
  a.image = j.at("image").get<std::string>();
  a.width = j.at("width").get<int>();
  a.height = j.at("height").get<int>();
  for (const auto& o : j.at("objects")) {
    const auto bb = o.at("bbox").get<std::array<double, 4>>();
    a.objects.push_back({o.at("class").get<std::string>(), Box{bb[0], bb[1], bb[2], bb[3]}});
  }
  a.scene_label = j.at("scene_label").get<std::string>();
  return a;
}

}  // namespace

std::string synth_dataset(const SceneSpec& spec, int n, const std::string& out_dir) {
  spec.validate();
  fs::create_directories(out_dir);
  const std::string manifest_path = (fs::path(out_dir) / "manifest.ndjson").string();
  std::ofstream manifest(manifest_path, std::ios::trunc);
  if (!manifest) throw std::runtime_error("cannot write manifest: " + manifest_path);
  for (int i = 0; i < n; ++i) {
    auto [image, ann] = synth_scene(spec, i);
    write_ppm((fs::path(out_dir) / ann.image).string(), image);
    manifest << annotation_to_json(ann).dump() << "\n";
  }
  manifest.flush();
  if (!manifest) throw std::runtime_error("short write to manifest: " + manifest_path);
  return manifest_path;
}

std::vector<Sample> load_dataset(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot open manifest: " + manifest_path);
  const fs::path dir = fs::path(manifest_path).parent_path();
  std::vector<Sample> out;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    Annotation ann;
    try {
      ann = annotation_from_json(json::parse(line));
      ann.validate();
    } catch (const std::exception& e) {
      throw std::runtime_error(manifest_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    const std::string img_path = (dir / ann.image).string();
    Tensor img;
    try {
      img = read_image(img_path);
    } catch (const std::exception& e) {
      throw std::runtime_error(manifest_path + ":" + std::to_string(line_no) + ": " + e.what());
    }
    out.push_back({std::move(img), std::move(ann)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// PPM / PGM

std::vector<uint8_t> encode_ppm(const Tensor& image) {
  if (image.shape.size() != 3 || image.dim(0) != 3) {
    throw std::invalid_argument("encode_ppm expects [3,H,W], got " + shape_str(image.shape));
  }
  const int h = image.dim(1), w = image.dim(2);
  std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<uint8_t> out(header.begin(), header.end());
  const double* p = image.ptr();
  const int64_t plane = static_cast<int64_t>(h) * w;
  out.reserve(out.size() + 3ull * plane);
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < 3; ++c) {
      const double v = std::min(1.0, std::max(0.0, p[c * plane + i]));
      out.push_back(static_cast<uint8_t>(std::lround(v * 255.0)));
    }
  }
  return out;
}

namespace {

// netpbm token reader: whitespace-separated, # comments to end of line
bool next_token(const std::vector<uint8_t>& b, size_t& pos, std::string& tok) {
  while (pos < b.size()) {
    const char c = static_cast<char>(b[pos]);
    if (c == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
      ++pos;
    } else {
      break;
    }
  }
  tok.clear();
  while (pos < b.size()) {
    const char c = static_cast<char>(b[pos]);
    if (c == ' ' || c == '\t' || c == '\r' || c == '\n' || c == '#') break;
    tok.push_back(c);
    ++pos;
  }
  return !tok.empty();
}

int must_int(const std::vector<uint8_t>& b, size_t& pos, const char* what) {
  std::string tok;
  if (!next_token(b, pos, tok)) throw std::runtime_error(std::string("truncated header: ") + what);
  try {
    return std::stoi(tok);
  } catch (...) {
    throw std::runtime_error(std::string("bad ") + what + " in image header: " + tok);
  }
}

}  // namespace

Tensor decode_image(const std::vector<uint8_t>& bytes) {
  size_t pos = 0;
  std::string magic;
  if (!next_token(bytes, pos, magic) || (magic != "P6" && magic != "P5")) {
    throw std::runtime_error("unsupported image format (want binary PPM P6 or PGM P5)");
  }
  const int channels = magic == "P6" ? 3 : 1;
  const int w = must_int(bytes, pos, "width");
  const int h = must_int(bytes, pos, "height");
  const int maxval = must_int(bytes, pos, "maxval");
  if (w <= 0 || h <= 0) throw std::runtime_error("bad image extents");
  if (maxval != 255) throw std::runtime_error("only 8-bit images supported, maxval=" + std::to_string(maxval));
  ++pos;  // single whitespace after maxval
  const size_t need = static_cast<size_t>(w) * h * channels;
  if (bytes.size() < pos + need) throw std::runtime_error("image payload truncated");
  Tensor img({channels, h, w});
  double* p = img.ptr();
  const int64_t plane = static_cast<int64_t>(h) * w;
  for (int64_t i = 0; i < plane; ++i) {
    for (int c = 0; c < channels; ++c) {
      p[c * plane + i] = bytes[pos + static_cast<size_t>(i) * channels + c] / 255.0;
    }
  }
  return img;
}

void write_ppm(const std::string& path, const Tensor& image) {
  const auto bytes = encode_ppm(image);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("short write: " + path);
}

Tensor read_image(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open image: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  try {
    return decode_image(bytes);
  } catch (const std::exception& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

Tensor fit_image(const Tensor& image, int target, bool* resized) {
  if (image.shape.size() != 3) throw std::invalid_argument("fit_image expects [C,H,W]");
  const int ch = image.dim(0), h = image.dim(1), w = image.dim(2);
  const bool needs = ch != 3 || h != target || w != target;
  if (resized) *resized = (h != target || w != target);
  if (!needs) return image;
  Tensor out({3, target, target});
  const double* src = image.ptr();
  double* dst = out.ptr();
  const int64_t in_plane = static_cast<int64_t>(h) * w;
  const int64_t out_plane = static_cast<int64_t>(target) * target;
  for (int y = 0; y < target; ++y) {
    const int sy = std::min(h - 1, y * h / target);
    for (int x = 0; x < target; ++x) {
      const int sx = std::min(w - 1, x * w / target);
      for (int c = 0; c < 3; ++c) {
        const int sc = ch == 3 ? c : 0;
        dst[c * out_plane + static_cast<int64_t>(y) * target + x] =
            src[sc * in_plane + static_cast<int64_t>(sy) * w + sx];
      }
    }
  }
  return out;
}

}  // namespace deeva
