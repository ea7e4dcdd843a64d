#pragma once

#include <torch/torch.h>

#include <filesystem>

namespace vlaforge::io {

// Rounds to the nearest multiple of 1/255 after clamping to [0, 1].
torch::Tensor quantize_u8(const torch::Tensor& values);

// rgb [h, w, 3] in [0, 1] -> 8-bit PNG. Parent directories are created.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& rgb);
// gray [h, w] in [0, 1] -> 8-bit grayscale PNG.
void write_gray_png(const std::filesystem::path& path, const torch::Tensor& gray);

// Returns float32 in [0, 1]; [h, w, 3] and [h, w] respectively. IoError on failure.
torch::Tensor read_rgb_png(const std::filesystem::path& path);
torch::Tensor read_gray_png(const std::filesystem::path& path);

}  // namespace vlaforge::io
