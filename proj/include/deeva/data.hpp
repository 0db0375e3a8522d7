#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "deeva/boxes.hpp"
#include "deeva/tensor.hpp"

namespace deeva {

extern const std::array<const char*, 5> kObjectClasses;  // worker hardhat vehicle excavator barrier
extern const std::array<const char*, 3> kSceneClasses;   // empty workers_present unattended_equipment

int object_class_id(const std::string& name);  // -1 when unknown
int scene_class_id(const std::string& name);

struct AnnotationObject {
  std::string cls;
  Box box;
};

struct Annotation {
  std::string image;  // file name relative to the manifest
  int width = 0, height = 0;
  std::vector<AnnotationObject> objects;
  std::string scene_label;

  void validate() const;
};

// empty / unattended_equipment / workers_present, from the object list alone.
std::string scene_label_for(const std::vector<AnnotationObject>& objects);

struct SceneSpec {
  uint64_t seed = 0;
  int size = 128;  // power of two
  int min_objects = 0, max_objects = 3;
  std::map<std::string, double> class_weights = {
      {"worker", 0.45}, {"vehicle", 0.30}, {"excavator", 0.25}};
  double brightness_lo = 0.85, brightness_hi = 1.15;
  double noise_amplitude = 0.02;
  double max_pairwise_iou = 0.4;

  void validate() const;
};

struct Sample {
  Tensor image;  // [3,H,W], values in [0,1]
  Annotation ann;
};

// Fully determined by (spec.seed, index).
std::pair<Tensor, Annotation> synth_scene(const SceneSpec& spec, int index);

// Writes scene_%06d.ppm files plus manifest.ndjson; returns the manifest path.
std::string synth_dataset(const SceneSpec& spec, int n, const std::string& out_dir);

std::vector<Sample> load_dataset(const std::string& manifest_path);

// --- image io (binary PPM P6 / PGM P5, 8-bit) ----------------------------
std::vector<uint8_t> encode_ppm(const Tensor& image);         // [3,H,W] -> P6
Tensor decode_image(const std::vector<uint8_t>& bytes);       // P6 -> [3,H,W], P5 -> [1,H,W]
void write_ppm(const std::string& path, const Tensor& image);
Tensor read_image(const std::string& path);

// Nearest-neighbor to [target,target]; grayscale replicated to 3 channels.
Tensor fit_image(const Tensor& image, int target, bool* resized = nullptr);

}  // namespace deeva
