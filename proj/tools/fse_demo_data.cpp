// Writes procedural shadow-free images so the synth/train/eval loop can be
// exercised without external data.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "fse/image_io.hpp"
#include "fse/shadow_synth.hpp"

int main(int argc, char** argv) {
  if (argc < 3 || argc > 5) {
    std::fprintf(stderr, "usage: fse-demo-data <out-dir> <count> [size=96] [seed=7]\n");
    return 2;
  }
  const std::string out = argv[1];
  const int count = std::atoi(argv[2]);
  const long size = argc > 3 ? std::atol(argv[3]) : 96;
  const unsigned long long seed = argc > 4 ? std::strtoull(argv[4], nullptr, 10) : 7;
  if (count <= 0 || size < 32) {
    std::fprintf(stderr, "count must be positive and size at least 32\n");
    return 2;
  }
  std::filesystem::create_directories(out);
  for (int i = 0; i < count; ++i) {
    auto img = fse::procedural_clean_image<float>(fse::derive_seed(seed, (unsigned long long)i), size, size);
    char name[64];
    std::snprintf(name, sizeof(name), "%s/clean_%03d.png", out.c_str(), i);
    fse::save_image(img, name);
  }
  std::printf("wrote %d clean images under %s\n", count, out.c_str());
  return 0;
}
