#include "restr/synth.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "restr/init.hpp"

namespace restr {

namespace {

constexpr std::array kShapes = {ShapeKind::kSquare, ShapeKind::kCircle, ShapeKind::kTriangle};
constexpr std::array kColors = {Color::kRed, Color::kGreen, Color::kBlue, Color::kYellow};
constexpr std::array kRelations = {Relation::kLeftOf, Relation::kRightOf, Relation::kAbove, Relation::kBelow};

std::vector<std::string> relation_words(Relation r) {
  switch (r) {
    case Relation::kLeftOf: return {"left", "of"};
    case Relation::kRightOf: return {"right", "of"};
    case Relation::kAbove: return {"above"};
    case Relation::kBelow: return {"below"};
  }
  return {};
}

bool holds(Relation r, const SceneObject& target, const SceneObject& anchor) {
  switch (r) {
    case Relation::kLeftOf: return target.cx < anchor.cx;
    case Relation::kRightOf: return target.cx > anchor.cx;
    case Relation::kAbove: return target.cy < anchor.cy;
    case Relation::kBelow: return target.cy > anchor.cy;
  }
  return false;
}

template <typename Enum, std::size_t N>
std::optional<Enum> parse_word(const std::string& w, const std::array<Enum, N>& all) {
  for (Enum e : all) {
    if (to_string(e) == w) return e;
  }
  return std::nullopt;
}

std::size_t count_matching(const Scene& s, ShapeKind shape, Color color) {
  return static_cast<std::size_t>(std::count_if(s.objects.begin(), s.objects.end(), [&](const SceneObject& o) {
    return o.shape == shape && o.color == color;
  }));
}

// Every expression in the grammar that uniquely picks `target`.
std::vector<std::vector<std::string>> expressions_for(const Scene& s, std::size_t target, bool relational) {
  std::vector<std::vector<std::string>> out;
  const SceneObject& t = s.objects[target];
  if (!relational) {
    if (count_matching(s, t.shape, t.color) == 1) out.push_back({to_string(t.color), to_string(t.shape)});
    return out;
  }
  for (std::size_t a = 0; a < s.objects.size(); ++a) {
    if (a == target) continue;
    const SceneObject& anchor = s.objects[a];
    if (count_matching(s, anchor.shape, anchor.color) != 1) continue;
    for (Relation r : kRelations) {
      if (!holds(r, t, anchor)) continue;
      std::size_t hits = 0;
      for (std::size_t k = 0; k < s.objects.size(); ++k) {
        if (k != a && s.objects[k].shape == t.shape && holds(r, s.objects[k], anchor)) ++hits;
      }
      if (hits != 1) continue;
      std::vector<std::string> words{to_string(t.shape)};
      for (auto& w : relation_words(r)) words.push_back(w);
      words.insert(words.end(), {"the", to_string(anchor.color), to_string(anchor.shape)});
      out.push_back(std::move(words));
    }
  }
  return out;
}

std::optional<Scene> place_scene(Rng& rng, int height, int width) {
  const int span = std::min(height, width);
  const int r_lo = std::max(3, span / 9), r_hi = std::max(r_lo, span / 5);
  std::uniform_int_distribution<int> n_objects(2, 4), radius(r_lo, r_hi);
  std::uniform_int_distribution<int> shape_pick(0, 2), color_pick(0, 3);
  Scene s{height, width, {}};
  const int n = n_objects(rng);
  for (int i = 0; i < n; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      SceneObject o;
      o.shape = kShapes[static_cast<std::size_t>(shape_pick(rng))];
      o.color = kColors[static_cast<std::size_t>(color_pick(rng))];
      o.radius = radius(rng);
      if (2 * o.radius + 1 > span) continue;
      o.cx = std::uniform_int_distribution<int>(o.radius, width - 1 - o.radius)(rng);
      o.cy = std::uniform_int_distribution<int>(o.radius, height - 1 - o.radius)(rng);
      // Bounding boxes at least one pixel apart, so pixel sets are disjoint.
      const bool clear = std::all_of(s.objects.begin(), s.objects.end(), [&](const SceneObject& q) {
        return std::abs(o.cx - q.cx) > o.radius + q.radius + 1 || std::abs(o.cy - q.cy) > o.radius + q.radius + 1;
      });
      if (clear) {
        s.objects.push_back(o);
        placed = true;
      }
    }
    if (!placed) return std::nullopt;
  }
  return s;
}

void write_f32(std::ostream& os, double v) {
  const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
  const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                         static_cast<char>((bits >> 16) & 0xff), static_cast<char>((bits >> 24) & 0xff)};
  os.write(bytes, 4);
}

std::string sample_stem(std::size_t id) {
  std::ostringstream os;
  os << std::setw(4) << std::setfill('0') << id;
  return os.str();
}

std::vector<char> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("missing data file " + p.string());
  return std::vector<char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace

std::string to_string(ShapeKind s) {
  switch (s) {
    case ShapeKind::kSquare: return "square";
    case ShapeKind::kCircle: return "circle";
    case ShapeKind::kTriangle: return "triangle";
  }
  return "?";
}

std::string to_string(Color c) {
  switch (c) {
    case Color::kRed: return "red";
    case Color::kGreen: return "green";
    case Color::kBlue: return "blue";
    case Color::kYellow: return "yellow";
  }
  return "?";
}

std::string to_string(Relation r) {
  std::string out;
  for (const auto& w : relation_words(r)) out += (out.empty() ? "" : " ") + w;
  return out;
}

bool SceneObject::contains(int x, int y) const {
  const int dx = x - cx, dy = y - cy;
  switch (shape) {
    case ShapeKind::kSquare: return std::abs(dx) <= radius && std::abs(dy) <= radius;
    case ShapeKind::kCircle: return dx * dx + dy * dy <= radius * radius;
    case ShapeKind::kTriangle: return std::abs(dy) <= radius && 2 * std::abs(dx) <= dy + radius;
  }
  return false;
}

std::size_t resolve(const Scene& scene, const std::vector<std::string>& words) {
  auto bad = [&]() -> ConfigError {
    std::string text;
    for (const auto& w : words) text += (text.empty() ? "" : " ") + w;
    return ConfigError("expression '" + text + "' is outside the template grammar");
  };
  std::vector<std::size_t> hits;
  if (words.size() == 2) {
    auto color = parse_word(words[0], kColors);
    auto shape = parse_word(words[1], kShapes);
    if (!color || !shape) throw bad();
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      if (scene.objects[i].color == *color && scene.objects[i].shape == *shape) hits.push_back(i);
    }
  } else if (words.size() == 5 || words.size() == 6) {
    auto shape = parse_word(words[0], kShapes);
    std::optional<Relation> rel;
    const std::size_t rel_len = words.size() - 4;
    for (Relation r : kRelations) {
      auto rw = relation_words(r);
      if (rw.size() == rel_len && std::equal(rw.begin(), rw.end(), words.begin() + 1)) rel = r;
    }
    auto anchor_color = parse_word(words[words.size() - 2], kColors);
    auto anchor_shape = parse_word(words.back(), kShapes);
    if (!shape || !rel || words[words.size() - 3] != "the" || !anchor_color || !anchor_shape) throw bad();
    std::vector<std::size_t> anchors;
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      if (scene.objects[i].color == *anchor_color && scene.objects[i].shape == *anchor_shape) anchors.push_back(i);
    }
    if (anchors.size() != 1) {
      throw AmbiguityError("anchor matches " + std::to_string(anchors.size()) + " objects");
    }
    const SceneObject& anchor = scene.objects[anchors[0]];
    for (std::size_t i = 0; i < scene.objects.size(); ++i) {
      if (i != anchors[0] && scene.objects[i].shape == *shape && holds(*rel, scene.objects[i], anchor)) {
        hits.push_back(i);
      }
    }
  } else {
    throw bad();
  }
  if (hits.size() != 1) throw AmbiguityError("expression matches " + std::to_string(hits.size()) + " objects");
  return hits[0];
}

Tensor render_image(const Scene& scene) {
  Tensor img({static_cast<std::size_t>(scene.height), static_cast<std::size_t>(scene.width), 3});
  for (const auto& o : scene.objects) {
    const std::array<double, 3> rgb = o.color == Color::kRed     ? std::array{1.0, 0.0, 0.0}
                                      : o.color == Color::kGreen ? std::array{0.0, 1.0, 0.0}
                                      : o.color == Color::kBlue  ? std::array{0.0, 0.0, 1.0}
                                                                 : std::array{1.0, 1.0, 0.0};
    for (int y = o.cy - o.radius; y <= o.cy + o.radius; ++y) {
      for (int x = o.cx - o.radius; x <= o.cx + o.radius; ++x) {
        if (!o.contains(x, y)) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = rgb[c];
      }
    }
  }
  return img;
}

Tensor render_mask(const Scene& scene, std::size_t object) {
  Tensor mask({static_cast<std::size_t>(scene.height), static_cast<std::size_t>(scene.width), 1});
  const SceneObject& o = scene.objects.at(object);
  for (int y = o.cy - o.radius; y <= o.cy + o.radius; ++y) {
    for (int x = o.cx - o.radius; x <= o.cx + o.radius; ++x) {
      if (o.contains(x, y)) mask.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), 0) = 1.0;
    }
  }
  return mask;
}

Vocabulary synth_vocabulary() {
  Vocabulary v;
  for (Color c : kColors) v.add(to_string(c));
  for (ShapeKind s : kShapes) v.add(to_string(s));
  for (const char* w : {"left", "right", "of", "above", "below", "the"}) v.add(w);
  return v;
}

Dataset generate(const GenerateOptions& options) {
  if (options.height < 32 || options.width < 32) {
    throw ConfigError("generate: canvas " + std::to_string(options.height) + "x" + std::to_string(options.width) +
                      " is below the 32x32 minimum");
  }
  if (options.count == 0) throw ConfigError("generate: count must be positive");
  if (options.expressions_per_image == 0) throw ConfigError("generate: expressions_per_image must be positive");
  Dataset data;
  data.vocab = synth_vocabulary();
  const std::size_t per = options.expressions_per_image;
  const std::size_t n_scenes = (options.count + per - 1) / per;
  for (std::size_t si = 0; si < n_scenes; ++si) {
    Rng rng(mix_seed(options.seed, si));
    const std::size_t want = std::min(per, options.count - si * per);
    bool done = false;
    for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
      auto scene = place_scene(rng, options.height, options.width);
      if (!scene) continue;
      std::vector<std::size_t> chosen;
      std::vector<std::vector<std::string>> exprs;
      for (std::size_t k = 0; k < want; ++k) {
        // First expression of a scene is relational; later ones mix both templates.
        const bool relational = k == 0 || std::bernoulli_distribution(0.5)(rng);
        std::vector<std::pair<std::size_t, std::vector<std::string>>> options_here;
        for (bool rel : {relational, !relational}) {
          if (k == 0 && !rel) continue;
          for (std::size_t i = 0; i < scene->objects.size(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
            for (auto& e : expressions_for(*scene, i, rel)) options_here.emplace_back(i, std::move(e));
          }
          if (!options_here.empty()) break;
        }
        if (options_here.empty()) break;
        auto& pick = options_here[std::uniform_int_distribution<std::size_t>(0, options_here.size() - 1)(rng)];
        chosen.push_back(pick.first);
        exprs.push_back(pick.second);
      }
      if (chosen.size() != want) continue;
      Tensor image = render_image(*scene);
      for (std::size_t k = 0; k < want; ++k) {
        Sample s;
        s.image = image;
        for (const auto& w : exprs[k]) s.tokens.push_back(data.vocab.id(w));
        s.mask = render_mask(*scene, chosen[k]);
        s.image_id = si;
        data.samples.push_back(std::move(s));
        data.targets.push_back(chosen[k]);
      }
      data.scenes.push_back(std::move(*scene));
      done = true;
    }
    if (!done) throw RuntimeError("generate: could not place a scene on the canvas after 1000 attempts");
  }
  return data;
}

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw DataError("cannot create dataset directory " + dir.string() + ": " + ec.message());
  std::ofstream index(dir / "index.txt", std::ios::binary);
  if (!index) throw DataError("cannot write " + (dir / "index.txt").string());
  index << "RSTRDS 1\n";
  for (std::size_t i = 0; i < data.samples.size(); ++i) {
    const Sample& s = data.samples[i];
    index << i << ' ' << s.image.dim(0) << ' ' << s.image.dim(1);
    for (int t : s.tokens) index << ' ' << t;
    index << '\n';
    std::ofstream img(dir / (sample_stem(i) + ".img"), std::ios::binary);
    for (double v : s.image.values()) write_f32(img, v);
    std::ofstream msk(dir / (sample_stem(i) + ".msk"), std::ios::binary);
    for (double v : s.mask.values()) msk.put(v > 0.5 ? 1 : 0);
    if (!img || !msk) throw DataError("failed writing sample " + std::to_string(i));
  }
  data.vocab.save(dir / "vocab.txt");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("dataset directory " + dir.string() + " does not exist");
  std::ifstream index(dir / "index.txt");
  if (!index) throw DataError("missing " + (dir / "index.txt").string());
  std::string header;
  std::getline(index, header);
  if (header.rfind("RSTRDS ", 0) != 0) throw DataError("index.txt: missing RSTRDS header");
  if (header != "RSTRDS 1") throw DataError("index.txt: unsupported dataset version '" + header.substr(7) + "'");

  Dataset data;
  data.vocab = Vocabulary::load(dir / "vocab.txt");
  std::map<std::vector<double>, std::size_t> image_ids;
  std::size_t line_no = 1;
  for (std::string line; std::getline(index, line);) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::size_t id = 0, h = 0, w = 0;
    if (!(ls >> id >> h >> w) || h == 0 || w == 0) {
      throw DataError("index.txt line " + std::to_string(line_no) + ": corrupt sample header");
    }
    if (id != data.samples.size()) {
      throw DataError("index.txt line " + std::to_string(line_no) + ": expected id " +
                      std::to_string(data.samples.size()) + ", found " + std::to_string(id));
    }
    Sample s;
    for (long long t; ls >> t;) {
      if (t < 0 || static_cast<std::size_t>(t) >= data.vocab.size() || t == kPadId) {
        throw DataError("index.txt line " + std::to_string(line_no) + ": invalid token id " + std::to_string(t));
      }
      s.tokens.push_back(static_cast<int>(t));
    }
    if (!ls.eof()) throw DataError("index.txt line " + std::to_string(line_no) + ": non-numeric token");
    if (s.tokens.empty()) throw DataError("index.txt line " + std::to_string(line_no) + ": empty expression");

    const auto img_bytes = read_file(dir / (sample_stem(id) + ".img"));
    if (img_bytes.size() != h * w * 3 * 4) {
      throw DataError(sample_stem(id) + ".img: expected " + std::to_string(h * w * 3 * 4) + " bytes, found " +
                      std::to_string(img_bytes.size()));
    }
    s.image = Tensor({h, w, 3});
    for (std::size_t i = 0; i < h * w * 3; ++i) {
      std::uint32_t bits = 0;
      for (int b = 3; b >= 0; --b) bits = (bits << 8) | static_cast<unsigned char>(img_bytes[i * 4 + b]);
      s.image.values()[i] = static_cast<double>(std::bit_cast<float>(bits));
    }
    const auto msk_bytes = read_file(dir / (sample_stem(id) + ".msk"));
    if (msk_bytes.size() != h * w) {
      throw DataError(sample_stem(id) + ".msk: expected " + std::to_string(h * w) + " bytes, found " +
                      std::to_string(msk_bytes.size()));
    }
    s.mask = Tensor({h, w, 1});
    for (std::size_t i = 0; i < h * w; ++i) {
      if (msk_bytes[i] != 0 && msk_bytes[i] != 1) throw DataError(sample_stem(id) + ".msk: non-binary mask value");
      s.mask.values()[i] = msk_bytes[i];
    }
    std::vector<double> key(s.image.values().begin(), s.image.values().end());
    auto [it, inserted] = image_ids.emplace(std::move(key), image_ids.size());
    s.image_id = it->second;
    data.samples.push_back(std::move(s));
  }
  if (data.samples.empty()) throw DataError("dataset " + dir.string() + " has no samples");
  return data;
}

IntegrityReport scan_dataset_dir(const std::filesystem::path& dir) {
  IntegrityReport r;
  if (!std::filesystem::is_directory(dir)) return r;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto ext = entry.path().extension();
    if (ext == ".img") ++r.image_files;
    if (ext == ".msk") ++r.mask_files;
  }
  std::ifstream index(dir / "index.txt");
  std::string line;
  if (!std::getline(index, line) || line != "RSTRDS 1") return r;
  while (std::getline(index, line)) {
    if (!line.empty()) ++r.indexed;
  }
  r.ok = r.indexed > 0 && r.indexed == r.image_files && r.indexed == r.mask_files;
  return r;
}

}  // namespace restr
