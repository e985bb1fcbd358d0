#include "sbcb/image_io.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>
#include <stdexcept>

SBCB_NAMESPACE_BEGIN

namespace {

cv::Mat read_raw(const std::filesystem::path& path, int flags) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("no such file: " + path.string());
  cv::Mat m;
  try {
    m = cv::imread(path.string(), flags);
  } catch (const cv::Exception& e) {
    throw std::runtime_error("cannot decode " + path.string() + ": " + e.what());
  }
  if (m.empty()) throw std::runtime_error("cannot decode " + path.string());
  return m;
}

void write_raw(const std::filesystem::path& path, const cv::Mat& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), m)) throw std::runtime_error("cannot write " + path.string());
}

}  // namespace

Tensor read_image(const std::filesystem::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_COLOR);
  const double scale = m.depth() == CV_16U ? 1.0 / 65535 : 1.0 / 255;
  Tensor t(Shape{1, 3, m.rows, m.cols});
  cv::Mat f;
  m.convertTo(f, CV_32FC3, scale);
  for (int y = 0; y < m.rows; ++y) {
    const cv::Vec3f* row = f.ptr<cv::Vec3f>(y);
    for (int x = 0; x < m.cols; ++x)
      for (int c = 0; c < 3; ++c) t.at(0, c, y, x) = row[x][2 - c];  // BGR -> RGB
  }
  return t;
}

void write_image(const std::filesystem::path& path, const Tensor& image) {
  if (image.n() != 1 || image.c() != 3) throw std::invalid_argument("write_image expects (1, 3, H, W)");
  cv::Mat m(image.h(), image.w(), CV_8UC3);
  for (int y = 0; y < image.h(); ++y)
    for (int x = 0; x < image.w(); ++x)
      for (int c = 0; c < 3; ++c)
        m.at<cv::Vec3b>(y, x)[2 - c] = cv::saturate_cast<std::uint8_t>(image.at(0, c, y, x) * 255.0);
  write_raw(path, m);
}

LabelMap read_label_png(const std::filesystem::path& path) {
  cv::Mat m = read_raw(path, cv::IMREAD_UNCHANGED);
  if (m.channels() != 1) {
    throw std::runtime_error(path.string() + ": label PNG must be single-channel, found " +
                             std::to_string(m.channels()) + " channels");
  }
  LabelMap out(m.rows, m.cols);
  cv::Mat i32;
  m.convertTo(i32, CV_32S);
  for (int y = 0; y < m.rows; ++y) {
    const std::int32_t* row = i32.ptr<std::int32_t>(y);
    for (int x = 0; x < m.cols; ++x) out.at(y, x) = row[x];
  }
  return out;
}

void write_label_png(const std::filesystem::path& path, const LabelMap& labels) {
  bool fits8 = true;
  for (auto v : labels.values()) {
    if (v < 0 || v > 65535) throw std::invalid_argument("label value " + std::to_string(v) + " does not fit a PNG");
    fits8 = fits8 && v <= 255;
  }
  cv::Mat m(labels.height(), labels.width(), fits8 ? CV_8U : CV_16U);
  for (int y = 0; y < labels.height(); ++y)
    for (int x = 0; x < labels.width(); ++x) {
      if (fits8) {
        m.at<std::uint8_t>(y, x) = static_cast<std::uint8_t>(labels.at(y, x));
      } else {
        m.at<std::uint16_t>(y, x) = static_cast<std::uint16_t>(labels.at(y, x));
      }
    }
  write_raw(path, m);
}

void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  cv::Mat m(mask.height(), mask.width(), CV_8U);
  for (int y = 0; y < mask.height(); ++y)
    for (int x = 0; x < mask.width(); ++x) m.at<std::uint8_t>(y, x) = mask.at(y, x) ? 255 : 0;
  write_raw(path, m);
}

void write_rgb_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& rgb, int height, int width) {
  if (rgb.size() != static_cast<std::size_t>(height) * width * 3) throw std::invalid_argument("write_rgb_png: size");
  cv::Mat m(height, width, CV_8UC3);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t i = (static_cast<std::size_t>(y) * width + x) * 3;
      m.at<cv::Vec3b>(y, x) = cv::Vec3b(rgb[i + 2], rgb[i + 1], rgb[i]);
    }
  write_raw(path, m);
}

SBCB_NAMESPACE_END
