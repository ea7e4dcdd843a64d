#include "vlaforge/image_io.hpp"

#include "vlaforge/errors.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace vlaforge::io {
namespace {

cv::Mat to_u8_mat(const torch::Tensor& values, int channels) {
  auto bytes = (values.to(torch::kFloat64).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
  const int h = static_cast<int>(values.size(0));
  const int w = static_cast<int>(values.size(1));
  cv::Mat mat(h, w, channels == 3 ? CV_8UC3 : CV_8UC1);
  std::memcpy(mat.data, bytes.data_ptr<uint8_t>(), static_cast<size_t>(bytes.numel()));
  return mat;
}

void write_mat(const std::filesystem::path& path, const cv::Mat& mat) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), mat);
  } catch (const cv::Exception& e) {
    throw IoError("cannot write " + path.string() + ": " + e.what());
  }
  if (!ok) throw IoError("cannot write " + path.string());
}

cv::Mat read_mat(const std::filesystem::path& path, int flags) {
  cv::Mat mat = cv::imread(path.string(), flags);
  if (mat.empty()) throw IoError("cannot read image " + path.string());
  return mat;
}

}  // namespace

torch::Tensor quantize_u8(const torch::Tensor& values) {
  return (values.clamp(0.0, 1.0) * 255.0).round() / 255.0;
}

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& rgb) {
  if (rgb.dim() != 3 || rgb.size(2) != 3) throw ShapeError("write_rgb_png expects [h, w, 3]");
  cv::Mat bgr;
  cv::cvtColor(to_u8_mat(rgb, 3), bgr, cv::COLOR_RGB2BGR);
  write_mat(path, bgr);
}

void write_gray_png(const std::filesystem::path& path, const torch::Tensor& gray) {
  if (gray.dim() != 2) throw ShapeError("write_gray_png expects [h, w]");
  write_mat(path, to_u8_mat(gray, 1));
}

torch::Tensor read_rgb_png(const std::filesystem::path& path) {
  cv::Mat rgb;
  cv::cvtColor(read_mat(path, cv::IMREAD_COLOR), rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.to(torch::kFloat32) / 255.0;
}

torch::Tensor read_gray_png(const std::filesystem::path& path) {
  cv::Mat gray = read_mat(path, cv::IMREAD_GRAYSCALE);
  auto t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
  return t.to(torch::kFloat32) / 255.0;
}

}  // namespace vlaforge::io
