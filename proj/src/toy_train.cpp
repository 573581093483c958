#include "ota/toy_train.hpp"

#include <cmath>
#include <optional>

#include "ota/rng.hpp"

namespace ota {

Eigen::VectorXd text_embedding(std::uint64_t seed, const std::string& text, std::size_t dim) {
  Rng rng(derive_seed(seed, text));
  Eigen::VectorXd v(static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = rng.normal();
  return v / v.norm();
}

namespace {

Box random_box(Rng& rng, double min_side, double max_side) {
  const double w = min_side + (max_side - min_side) * rng.uniform_real();
  const double h = min_side + (max_side - min_side) * rng.uniform_real();
  const double x = (1.0 - w) * rng.uniform_real();
  const double y = (1.0 - h) * rng.uniform_real();
  return {x, y, x + w, y + h, Frame::normalized};
}

// A normalized box disjoint from `taken`; gives up on disjointness after a
// bounded number of draws.
Box disjoint_box(Rng& rng, const std::vector<Box>& taken, double min_side, double max_side) {
  Box b = random_box(rng, min_side, max_side);
  for (int attempt = 0; attempt < 1000; ++attempt) {
    bool clear = true;
    for (const auto& t : taken) clear = clear && intersection_area(b, t) == 0.0;
    if (clear) break;
    b = random_box(rng, min_side, max_side);
  }
  return b;
}

Box snap_to_pixels(const Box& normalized, ImageSize size) {
  Box p = to_pixel(normalized, size);
  p.x1 = std::round(p.x1);
  p.y1 = std::round(p.y1);
  p.x2 = std::round(p.x2);
  p.y2 = std::round(p.y2);
  return p;
}

}  // namespace

ToyWorld generate_world(const WorldConfig& cfg) {
  if (cfg.n_images == 0 || cfg.queries_per_image == 0 || cfg.max_attrs_per_query == 0)
    throw std::invalid_argument("generate_world: sizes must be positive");
  if (cfg.d_vis == 0 || cfg.d_txt == 0) throw std::invalid_argument("generate_world: dims must be positive");

  ToyWorld world{cfg, {}, {}, {}};
  Rng rng(derive_seed(cfg.seed, "world"));
  for (std::size_t i = 0; i < cfg.n_images; ++i) {
    AggregatedSample s;
    s.image_id = "toy-" + std::to_string(i);
    s.image_size = cfg.image_size;

    std::vector<Box> objects;  // normalized, distinct
    for (std::size_t q = 0; q < cfg.queries_per_image; ++q) {
      QueryEntry entry{"object " + std::to_string(i) + "." + std::to_string(q), QueryKind::expression, {}};
      const auto n_attr = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(cfg.max_attrs_per_query)));
      for (std::size_t k = 0; k < n_attr; ++k) {
        const std::string text = "attribute " + std::to_string(i) + "." + std::to_string(q) + "." + std::to_string(k);
        entry.attributes.push_back({k == 0 ? "category" : "other", text, {text}, 1.0});
      }
      s.queries.push_back(std::move(entry));

      const bool shared = cfg.plant_multi_label && i == 0 && q == 1;
      if (!shared) objects.push_back(disjoint_box(rng, objects, 0.1, 0.25));
      s.ground_truth.push_back({snap_to_pixels(objects.back(), cfg.image_size), q});
      if (shared) world.multi_label_objects.emplace_back(i, objects.size() - 1);
    }

    ToyImage image;
    for (const auto& g : s.ground_truth) {
      const Box n = to_normalized(g.box, cfg.image_size);
      bool seen = false;
      for (const auto& p : image.pred_boxes) seen = seen || iou(p, n) > 0.9;
      if (seen) continue;
      Box jittered = n;
      jittered.x1 += cfg.jitter * (2.0 * rng.uniform_real() - 1.0);
      jittered.y1 += cfg.jitter * (2.0 * rng.uniform_real() - 1.0);
      jittered.x2 += cfg.jitter * (2.0 * rng.uniform_real() - 1.0);
      jittered.y2 += cfg.jitter * (2.0 * rng.uniform_real() - 1.0);
      image.pred_boxes.push_back(jittered);
    }
    std::vector<Box> taken = image.pred_boxes;
    for (std::size_t e = 0; e < cfg.extra_slots; ++e) {
      taken.push_back(disjoint_box(rng, taken, 0.05, 0.15));
      image.pred_boxes.push_back(taken.back());
    }

    image.initial_features.resize(static_cast<Eigen::Index>(image.pred_boxes.size()), static_cast<Eigen::Index>(cfg.d_vis));
    for (Eigen::Index r = 0; r < image.initial_features.rows(); ++r)
      for (Eigen::Index c = 0; c < image.initial_features.cols(); ++c) image.initial_features(r, c) = rng.normal();

    for (const auto& query : s.queries) {
      world.embeddings.try_emplace(query.text, text_embedding(cfg.seed, query.text, cfg.d_txt));
      for (const auto& a : query.attributes)
        world.embeddings.try_emplace(a.description, text_embedding(cfg.seed, a.description, cfg.d_txt));
    }
    image.sample = std::move(s);
    world.images.push_back(std::move(image));
  }
  return world;
}

void validate_train_config(const TrainConfig& cfg) {
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw std::invalid_argument("train: lr must be finite and non-negative");
  validate_sampler_config(cfg.sampler);
}

TrainState initial_state(const ToyWorld& world, const TrainConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "head"));
  TrainState state{HeadParams<double>::init(static_cast<Eigen::Index>(world.config.d_vis),
                                            static_cast<Eigen::Index>(world.config.d_txt), rng, 5.0, -2.0,
                                            cfg.shared_affine),
                   {}};
  for (const auto& image : world.images) state.features.push_back(image.initial_features);
  return state;
}

namespace {

struct TextMatrices {
  Eigen::MatrixXd query;
  Eigen::MatrixXd attr;
};

TextMatrices embed(const ToyWorld& world, const TextBatch& batch) {
  const auto d = static_cast<Eigen::Index>(world.config.d_txt);
  TextMatrices out{Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.q_max), d),
                   Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(batch.q_max * batch.a_max), d)};
  for (Eigen::Index j = 0; j < out.query.rows(); ++j)
    if (batch.query_valid[j]) out.query.row(j) = world.embeddings.at(batch.query_texts[static_cast<std::size_t>(j)]).transpose();
  for (Eigen::Index k = 0; k < out.attr.rows(); ++k)
    if (batch.attr_valid[k]) out.attr.row(k) = world.embeddings.at(batch.attr_texts[static_cast<std::size_t>(k)]).transpose();
  return out;
}

struct Forward {
  TextMatrices text;
  DualLogits<double> logits;
  Assignment assignment;
  SemanticLosses semantic;
  LossParts parts;
};

Forward forward(const ToyWorld& world, const TrainState& state, std::size_t image, const SupervisionBatch& batch,
                const MalConfig& mal) {
  const auto& boxes = world.images[image].pred_boxes;
  const auto& cs = batch.correspondence;
  Forward f{embed(world, batch.text), {}, {}, {}, {}};
  f.logits = dual_forward(state.features[image], f.text.query, f.text.attr, state.params, batch.text);
  f.assignment = hungarian_match(boxes, f.logits.query, cs.gt_boxes, query_columns(cs.m_q));
  f.semantic = semantic_losses(f.logits.query, f.logits.attr, f.assignment, boxes, cs, mal);
  const LocalizationLosses loc = localization_losses(boxes, cs.gt_boxes, f.assignment);
  f.parts = {f.semantic.query, f.semantic.attr, loc.box, loc.giou, 0.0, 0.0};
  return f;
}

void accumulate(LossParts& acc, const LossParts& p, double scale) {
  acc.query += scale * p.query;
  acc.attr += scale * p.attr;
  acc.box += scale * p.box;
  acc.giou += scale * p.giou;
}

bool finite(const LossParts& p) {
  return std::isfinite(p.query) && std::isfinite(p.attr) && std::isfinite(p.box) && std::isfinite(p.giou);
}

}  // namespace

HistoryEntry full_objective(const ToyWorld& world, const TrainState& state, const TrainConfig& cfg) {
  HistoryEntry entry;
  const double scale = 1.0 / static_cast<double>(world.images.size());
  for (std::size_t i = 0; i < world.images.size(); ++i) {
    const SupervisionBatch batch = full_batch(world.images[i].sample, cfg.sampler.q_max, cfg.sampler.a_max);
    const Forward f = forward(world, state, i, batch, cfg.mal);
    accumulate(entry.parts, f.parts, scale);
    entry.n_pos += f.semantic.n_pos;
  }
  entry.total = total_loss(entry.parts, cfg.weights);
  return entry;
}

TrainResult train(const ToyWorld& world, const TrainConfig& cfg) {
  validate_train_config(cfg);
  TrainResult result{initial_state(world, cfg), {}};
  TrainState& state = result.state;
  HeadParams<double>& p = state.params;
  Rng sampler_rng(derive_seed(cfg.seed, "sampler"));
  const double scale = 1.0 / static_cast<double>(world.images.size());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    HistoryEntry entry;
    entry.step = step;
    Eigen::MatrixXd grad_w = Eigen::MatrixXd::Zero(p.w.rows(), p.w.cols());
    std::vector<Eigen::MatrixXd> grad_v;
    double g_qa = 0.0, g_qb = 0.0, g_aa = 0.0, g_ab = 0.0;

    for (std::size_t i = 0; i < world.images.size(); ++i) {
      const SupervisionBatch batch = sample_rsvg(world.images[i].sample, cfg.sampler, sampler_rng);
      std::optional<Forward> fwd;
      try {
        fwd.emplace(forward(world, state, i, batch, cfg.mal));
      } catch (const ZeroNormError&) {
        // A collapsed feature row only arises from a runaway update.
        throw TrainingDiverged(step);
      }
      const Forward& f = *fwd;
      accumulate(entry.parts, f.parts, scale);
      entry.n_pos += f.semantic.n_pos;

      const Eigen::MatrixXd& v = state.features[i];
      const Eigen::MatrixXd up_q = (cfg.weights.query * scale) * f.semantic.grad_query;
      const auto gq = similarity_backward(v, f.text.query, p.w, p.query, f.logits.query.mask, up_q);
      Eigen::MatrixXd gv = gq.v;
      grad_w += gq.w;
      g_qa += gq.alpha_raw;
      g_qb += gq.beta;
      if (cfg.weights.attr != 0.0) {
        const Eigen::MatrixXd up_a = (cfg.weights.attr * scale) * f.semantic.grad_attr;
        const auto ga = similarity_backward(v, f.text.attr, p.w, p.attr_affine(), f.logits.attr.mask, up_a);
        gv += ga.v;
        grad_w += ga.w;
        g_aa += ga.alpha_raw;
        g_ab += ga.beta;
      }
      grad_v.push_back(std::move(gv));
    }

    entry.total = total_loss(entry.parts, cfg.weights);
    bool ok = std::isfinite(entry.total) && finite(entry.parts) && grad_w.allFinite() && std::isfinite(g_qa) &&
              std::isfinite(g_qb) && std::isfinite(g_aa) && std::isfinite(g_ab);
    for (const auto& g : grad_v) ok = ok && g.allFinite();
    if (!ok) throw TrainingDiverged(step);

    p.w -= cfg.lr * grad_w;
    for (std::size_t i = 0; i < grad_v.size(); ++i) state.features[i] -= cfg.lr * grad_v[i];
    if (p.shared_affine) {
      p.query.alpha_raw -= cfg.lr * (g_qa + g_aa);
      p.query.beta -= cfg.lr * (g_qb + g_ab);
    } else {
      p.query.alpha_raw -= cfg.lr * g_qa;
      p.query.beta -= cfg.lr * g_qb;
      p.attr.alpha_raw -= cfg.lr * g_aa;
      p.attr.beta -= cfg.lr * g_ab;
    }
    bool state_ok = p.w.allFinite() && std::isfinite(p.query.alpha()) && std::isfinite(p.query.beta) &&
                    std::isfinite(p.attr.alpha()) && std::isfinite(p.attr.beta);
    for (const auto& v : state.features) state_ok = state_ok && v.allFinite();
    if (!state_ok) throw TrainingDiverged(step);
    result.history.push_back(entry);
  }
  return result;
}

namespace {

void tally(Agreement& a, double prob, bool planted, double threshold) {
  if (planted) {
    ++a.positives;
    a.positive_margin += prob;
    if (prob >= threshold) ++a.true_positives;
  } else {
    ++a.negatives;
    a.negative_margin += prob;
    if (prob < threshold) ++a.true_negatives;
  }
}

void finish(Agreement& a) {
  if (a.positives) a.positive_margin /= static_cast<double>(a.positives);
  if (a.negatives) a.negative_margin /= static_cast<double>(a.negatives);
}

}  // namespace

RecoveryReport evaluate_recovery(const ToyWorld& world, const TrainState& state, const TrainConfig& cfg,
                                 double threshold) {
  RecoveryReport r;
  r.threshold = threshold;
  for (std::size_t i = 0; i < world.images.size(); ++i) {
    const SupervisionBatch batch = full_batch(world.images[i].sample, cfg.sampler.q_max, cfg.sampler.a_max);
    const Forward f = forward(world, state, i, batch, cfg.mal);
    const auto& cs = batch.correspondence;
    const auto gt_of_pred = f.assignment.gt_of_pred(static_cast<std::size_t>(f.logits.query.values.rows()));

    for (const auto& [pred, obj] : f.assignment.pairs) {
      ++r.matched_rows;
      const auto row = static_cast<Eigen::Index>(pred);
      const auto o = static_cast<Eigen::Index>(obj);
      for (Eigen::Index j = 0; j < cs.m_q.cols(); ++j)
        if (f.logits.query.mask[j]) tally(r.query, sigmoid(f.logits.query.values(row, j)), cs.m_q(o, j) != 0, threshold);
      for (Eigen::Index k = 0; k < cs.m_a.cols(); ++k)
        if (f.logits.attr.mask[k]) tally(r.attr, sigmoid(f.logits.attr.values(row, k)), cs.m_a(o, k) != 0, threshold);
    }

    for (const auto& [image, obj] : world.multi_label_objects) {
      if (image != i) continue;
      double best = 0.0;
      for (std::size_t pred = 0; pred < gt_of_pred.size(); ++pred) {
        if (gt_of_pred[pred] != static_cast<int>(obj)) continue;
        double lowest = 1.0;
        for (Eigen::Index j = 0; j < cs.m_q.cols(); ++j)
          if (cs.m_q(static_cast<Eigen::Index>(obj), j))
            lowest = std::min(lowest, sigmoid(f.logits.query.values(static_cast<Eigen::Index>(pred), j)));
        best = lowest;
      }
      r.multi_label_min = std::min(r.multi_label_min, best);
    }
  }
  finish(r.query);
  finish(r.attr);
  return r;
}

namespace {

nlohmann::json to_json(const Agreement& a) {
  return {{"positive_margin", a.positive_margin}, {"negative_margin", a.negative_margin},
          {"positives", a.positives},             {"negatives", a.negatives},
          {"tpr", a.tpr()},                       {"tnr", a.tnr()},
          {"agreement", a.balanced()},            {"raw_agreement", a.raw()}};
}

}  // namespace

nlohmann::json to_json(const RecoveryReport& r) {
  return {{"threshold", r.threshold},
          {"matched_rows", r.matched_rows},
          {"query", to_json(r.query)},
          {"attr", to_json(r.attr)},
          {"multi_label_min", r.multi_label_min}};
}

void write_history_csv(std::ostream& out, const std::vector<HistoryEntry>& history) {
  out << "step,total,l_query,l_attr,l_box,l_giou\n";
  out.precision(17);
  for (const auto& h : history)
    out << h.step << ',' << h.total << ',' << h.parts.query << ',' << h.parts.attr << ',' << h.parts.box << ','
        << h.parts.giou << '\n';
}

}  // namespace ota
