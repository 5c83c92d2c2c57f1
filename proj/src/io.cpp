#include "avk/io.hpp"

#include <png.h>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace avk::io {

using nlohmann::json;

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

// ---------------------------------------------------------------- JSON

void save_skeleton_json(const Skeleton& s, const std::filesystem::path& path) {
  json j;
  j["joints"] = s.name;
  j["parents"] = s.parent;
  std::vector<std::array<double, 3>> pos(s.joint_count());
  for (int i = 0; i < s.joint_count(); ++i)
    pos[i] = {s.rest_position(0, i), s.rest_position(1, i), s.rest_position(2, i)};
  j["rest_positions"] = pos;
  write_text_file(path, j.dump(2));
}

Skeleton load_skeleton_json(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  Skeleton s;
  s.name = j.at("joints").get<std::vector<std::string>>();
  s.parent = j.at("parents").get<std::vector<int>>();
  auto pos = j.at("rest_positions").get<std::vector<std::array<double, 3>>>();
  s.rest_position.resize(3, pos.size());
  for (size_t i = 0; i < pos.size(); ++i)
    s.rest_position.col(i) << pos[i][0], pos[i][1], pos[i][2];
  s.validate();
  return s;
}

void save_pose_json(const Pose& p, const std::filesystem::path& path) {
  json j;
  std::vector<std::array<double, 3>> theta(p.joint_count());
  for (int i = 0; i < p.joint_count(); ++i)
    theta[i] = {p.theta(0, i), p.theta(1, i), p.theta(2, i)};
  j["theta"] = theta;
  j["root_translation"] = {p.root_translation.x(), p.root_translation.y(),
                           p.root_translation.z()};
  write_text_file(path, j.dump(2));
}

Pose load_pose_json(const std::filesystem::path& path) {
  json j = json::parse(read_text_file(path));
  Pose p;
  auto theta = j.at("theta").get<std::vector<std::array<double, 3>>>();
  p.theta.resize(3, theta.size());
  for (size_t i = 0; i < theta.size(); ++i)
    p.theta.col(i) << theta[i][0], theta[i][1], theta[i][2];
  auto rt = j.at("root_translation").get<std::array<double, 3>>();
  p.root_translation << rt[0], rt[1], rt[2];
  return p;
}

// ---------------------------------------------------------------- OBJ

void save_obj(const SkinnedMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out.precision(9);
  const bool colors = mesh.has_colors();
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    out << "v " << mesh.vertices(0, v) << ' ' << mesh.vertices(1, v) << ' '
        << mesh.vertices(2, v);
    if (colors)
      out << ' ' << mesh.colors(0, v) << ' ' << mesh.colors(1, v) << ' '
          << mesh.colors(2, v);
    out << '\n';
  }
  for (int f = 0; f < mesh.face_count(); ++f)
    out << "f " << mesh.faces(0, f) + 1 << ' ' << mesh.faces(1, f) + 1 << ' '
        << mesh.faces(2, f) + 1 << '\n';
}

SkinnedMesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<double> verts, cols;
  std::vector<int> faces;
  std::string line;
  bool any_color = false;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "v") {
      double x, y, z;
      ss >> x >> y >> z;
      verts.insert(verts.end(), {x, y, z});
      double r, g, b;
      if (ss >> r >> g >> b) {
        cols.insert(cols.end(), {r, g, b});
        any_color = true;
      } else {
        cols.insert(cols.end(), {0, 0, 0});
      }
    } else if (tag == "f") {
      for (int k = 0; k < 3; ++k) {
        std::string tok;
        ss >> tok;
        faces.push_back(std::stoi(tok.substr(0, tok.find('/'))) - 1);
      }
    }
  }
  SkinnedMesh mesh;
  const int V = static_cast<int>(verts.size() / 3);
  mesh.vertices.resize(3, V);
  std::memcpy(mesh.vertices.data(), verts.data(), verts.size() * sizeof(double));
  if (any_color) {
    mesh.colors.resize(3, V);
    std::memcpy(mesh.colors.data(), cols.data(), cols.size() * sizeof(double));
  }
  mesh.faces.resize(3, faces.size() / 3);
  for (size_t f = 0; f < faces.size() / 3; ++f)
    mesh.faces.col(f) << faces[3 * f], faces[3 * f + 1], faces[3 * f + 2];
  return mesh;
}

// ---------------------------------------------------------------- PLY

void save_ply(const SkinnedMesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  const bool colors = mesh.has_colors();
  const bool weights = mesh.has_weights();
  out << "ply\nformat binary_little_endian 1.0\n";
  out << "element vertex " << mesh.vertex_count() << "\n";
  out << "property float x\nproperty float y\nproperty float z\n";
  if (colors) out << "property float red\nproperty float green\nproperty float blue\n";
  if (weights) out << "property list uchar float skin_weights\n";
  out << "element face " << mesh.face_count() << "\n";
  out << "property list uchar int vertex_indices\n";
  out << "end_header\n";
  const int J = weights ? mesh.weights.joint_count() : 0;
  for (int v = 0; v < mesh.vertex_count(); ++v) {
    float p[3] = {static_cast<float>(mesh.vertices(0, v)),
                  static_cast<float>(mesh.vertices(1, v)),
                  static_cast<float>(mesh.vertices(2, v))};
    out.write(reinterpret_cast<char*>(p), sizeof(p));
    if (colors) {
      float c[3] = {static_cast<float>(mesh.colors(0, v)),
                    static_cast<float>(mesh.colors(1, v)),
                    static_cast<float>(mesh.colors(2, v))};
      out.write(reinterpret_cast<char*>(c), sizeof(c));
    }
    if (weights) {
      unsigned char n = static_cast<unsigned char>(J);
      out.write(reinterpret_cast<char*>(&n), 1);
      for (int j = 0; j < J; ++j) {
        float w = static_cast<float>(mesh.weights.w(v, j));
        out.write(reinterpret_cast<char*>(&w), sizeof(float));
      }
    }
  }
  for (int f = 0; f < mesh.face_count(); ++f) {
    unsigned char n = 3;
    out.write(reinterpret_cast<char*>(&n), 1);
    int idx[3] = {mesh.faces(0, f), mesh.faces(1, f), mesh.faces(2, f)};
    out.write(reinterpret_cast<char*>(idx), sizeof(idx));
  }
}

SkinnedMesh load_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  int n_vertex = 0, n_face = 0;
  bool colors = false, weights = false;
  std::getline(in, line);
  if (line != "ply") throw InputError("not a PLY file: " + path.string());
  std::string element;
  while (std::getline(in, line) && line != "end_header") {
    std::istringstream ss(line);
    std::string tag;
    ss >> tag;
    if (tag == "format") {
      std::string fmt;
      ss >> fmt;
      if (fmt != "binary_little_endian")
        throw InputError("unsupported PLY format: " + fmt);
    } else if (tag == "element") {
      std::string kind;
      ss >> kind;
      element = kind;
      if (kind == "vertex") ss >> n_vertex;
      if (kind == "face") ss >> n_face;
    } else if (tag == "property" && element == "vertex") {
      std::string a, b;
      ss >> a >> b;
      if (a == "float" && b == "red") colors = true;
      if (a == "list") {
        std::string c, d;
        ss >> c >> d;
        if (d == "skin_weights") weights = true;
      }
    }
  }
  SkinnedMesh mesh;
  mesh.vertices.resize(3, n_vertex);
  if (colors) mesh.colors.resize(3, n_vertex);
  std::vector<std::vector<float>> wrows(n_vertex);
  for (int v = 0; v < n_vertex; ++v) {
    float p[3];
    in.read(reinterpret_cast<char*>(p), sizeof(p));
    mesh.vertices.col(v) << p[0], p[1], p[2];
    if (colors) {
      float c[3];
      in.read(reinterpret_cast<char*>(c), sizeof(c));
      mesh.colors.col(v) << c[0], c[1], c[2];
    }
    if (weights) {
      unsigned char n;
      in.read(reinterpret_cast<char*>(&n), 1);
      wrows[v].resize(n);
      in.read(reinterpret_cast<char*>(wrows[v].data()), n * sizeof(float));
    }
  }
  if (weights && n_vertex > 0) {
    mesh.weights.w.resize(n_vertex, wrows[0].size());
    for (int v = 0; v < n_vertex; ++v)
      for (size_t j = 0; j < wrows[v].size(); ++j) mesh.weights.w(v, j) = wrows[v][j];
  }
  mesh.faces.resize(3, n_face);
  for (int f = 0; f < n_face; ++f) {
    unsigned char n;
    in.read(reinterpret_cast<char*>(&n), 1);
    if (n != 3) throw InputError("non-triangle face in PLY");
    int idx[3];
    in.read(reinterpret_cast<char*>(idx), sizeof(idx));
    mesh.faces.col(f) << idx[0], idx[1], idx[2];
  }
  if (!in) throw InputError("truncated PLY: " + path.string());
  return mesh;
}

// ---------------------------------------------------------------- PFM

void save_pfm(const ImageF& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3)
    throw InputError("PFM supports 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << (img.channels == 3 ? "PF" : "Pf") << "\n"
      << img.width << " " << img.height << "\n-1.0\n";
  // PFM stores rows bottom-up
  for (int y = img.height - 1; y >= 0; --y)
    out.write(reinterpret_cast<const char*>(&img.at(0, y, 0)),
              static_cast<std::streamsize>(img.width) * img.channels * sizeof(float));
}

ImageF load_pfm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::string magic;
  int w, h;
  double scale;
  in >> magic >> w >> h >> scale;
  in.get();  // single whitespace after scale
  if (magic != "PF" && magic != "Pf") throw InputError("not a PFM file");
  if (scale > 0) throw InputError("big-endian PFM not supported");
  ImageF img(w, h, magic == "PF" ? 3 : 1);
  for (int y = h - 1; y >= 0; --y)
    in.read(reinterpret_cast<char*>(&img.at(0, y, 0)),
            static_cast<std::streamsize>(w) * img.channels * sizeof(float));
  if (!in) throw InputError("truncated PFM: " + path.string());
  return img;
}

// ---------------------------------------------------------------- PNG

namespace {

void write_png(const std::filesystem::path& path, const void* data, int w, int h,
               int bit_depth, int color_type, int channels) {
  FILE* fp = std::fopen(path.string().c_str(), "wb");
  if (!fp) throw InputError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw NumericalError("libpng write failure: " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, w, h, bit_depth, color_type, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // in-memory data is little-endian
  const size_t stride = static_cast<size_t>(w) * channels * (bit_depth / 8);
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (int y = 0; y < h; ++y)
    png_write_row(png, const_cast<png_bytep>(bytes + y * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
}

void read_png(const std::filesystem::path& path, void* data, int expect_w, int* w, int* h,
              int expect_bit_depth, int expect_color_type, int channels, size_t capacity,
              bool probe_only) {
  (void)expect_w;
  FILE* fp = std::fopen(path.string().c_str(), "rb");
  if (!fp) throw InputError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw InputError("libpng read failure: " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  *w = png_get_image_width(png, info);
  *h = png_get_image_height(png, info);
  if (png_get_bit_depth(png, info) != expect_bit_depth ||
      png_get_color_type(png, info) != expect_color_type) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw InputError("unexpected PNG layout: " + path.string());
  }
  if (probe_only) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return;
  }
  if (expect_bit_depth == 16) png_set_swap(png);
  const size_t stride = static_cast<size_t>(*w) * channels * (expect_bit_depth / 8);
  if (stride * *h > capacity) throw InputError("PNG buffer too small");
  auto* bytes = static_cast<unsigned char*>(data);
  for (int y = 0; y < *h; ++y) png_read_row(png, bytes + y * stride, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
}

template <typename T>
Image<T> read_png_image(const std::filesystem::path& path, int bit_depth, int color_type,
                        int channels) {
  int w = 0, h = 0;
  read_png(path, nullptr, 0, &w, &h, bit_depth, color_type, channels, 0, true);
  Image<T> img(w, h, channels);
  read_png(path, img.data.data(), w, &w, &h, bit_depth, color_type, channels,
           img.data.size() * sizeof(T), false);
  return img;
}

}  // namespace

void save_png_gray8(const ImageU8& img, const std::filesystem::path& path) {
  if (img.channels != 1) throw InputError("save_png_gray8 needs 1 channel");
  write_png(path, img.data.data(), img.width, img.height, 8, PNG_COLOR_TYPE_GRAY, 1);
}

ImageU8 load_png_gray8(const std::filesystem::path& path) {
  return read_png_image<unsigned char>(path, 8, PNG_COLOR_TYPE_GRAY, 1);
}

void save_png_rgba16(const ImageU16& img, const std::filesystem::path& path) {
  if (img.channels != 4) throw InputError("save_png_rgba16 needs 4 channels");
  write_png(path, img.data.data(), img.width, img.height, 16, PNG_COLOR_TYPE_RGBA, 4);
}

ImageU16 load_png_rgba16(const std::filesystem::path& path) {
  return read_png_image<unsigned short>(path, 16, PNG_COLOR_TYPE_RGBA, 4);
}

void save_png_gray16(const ImageU16& img, const std::filesystem::path& path) {
  if (img.channels != 1) throw InputError("save_png_gray16 needs 1 channel");
  write_png(path, img.data.data(), img.width, img.height, 16, PNG_COLOR_TYPE_GRAY, 1);
}

ImageU16 load_png_gray16(const std::filesystem::path& path) {
  return read_png_image<unsigned short>(path, 16, PNG_COLOR_TYPE_GRAY, 1);
}

}  // namespace avk::io
