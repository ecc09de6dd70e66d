#include "mcan/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>

namespace mcan {

std::string Shape::str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) +
           "," + std::to_string(w) + ")";
}

void ConvSpec::validate() const {
    if (kh < 1 || kw < 1) throw ShapeError("conv kernel dims must be >= 1");
    if (groups < 1) throw ShapeError("conv groups must be >= 1");
    if (in_channels % groups != 0)
        throw ShapeError("conv in_channels " + std::to_string(in_channels) +
                         " not divisible by groups " + std::to_string(groups));
    if (out_channels % groups != 0)
        throw ShapeError("conv out_channels " + std::to_string(out_channels) +
                         " not divisible by groups " + std::to_string(groups));
    if (pad < 0) throw ShapeError("conv padding must be non-negative");
}

// --- thread pool -----------------------------------------------------------

namespace {

int env_thread_count() {
    if (const char* v = std::getenv("MCAN_THREADS")) {
        int n = std::atoi(v);
        if (n > 0) return n;
    }
    unsigned hc = std::thread::hardware_concurrency();
    return hc ? static_cast<int>(hc) : 1;
}

std::atomic<int> g_thread_override{0};
thread_local bool tl_in_parallel = false;

// Persistent pool; workers pull fixed chunk indices so the partition of
// [0, count) never depends on scheduling.
class Pool {
public:
    static Pool& instance() {
        // leaked deliberately: workers park on the condition variable at
        // process exit, so the pool must outlive static destruction
        static Pool* p = new Pool();
        return *p;
    }

    void run(int64_t count, int workers, const std::function<void(int64_t, int64_t)>& fn) {
        ensure(workers - 1);
        std::unique_lock lock(mu_);
        fn_ = &fn;
        count_ = count;
        chunks_ = workers;
        next_chunk_ = 0;
        done_chunks_ = 0;
        ++generation_;
        cv_work_.notify_all();
        work_chunks(lock);
        cv_done_.wait(lock, [&] { return done_chunks_ == chunks_; });
        fn_ = nullptr;
    }

private:
    Pool() = default;

    void ensure(int n) {
        std::lock_guard lock(mu_);
        while (static_cast<int>(threads_.size()) < n)
            threads_.emplace_back([this] { worker(); });
    }

    void worker() {
        std::unique_lock lock(mu_);
        uint64_t seen = generation_;
        for (;;) {
            cv_work_.wait(lock, [&] { return generation_ != seen; });
            seen = generation_;
            work_chunks(lock);
        }
    }

    // mu_ held on entry and exit; released around fn.
    void work_chunks(std::unique_lock<std::mutex>& lock) {
        for (;;) {
            if (next_chunk_ >= chunks_) return;
            int64_t chunk = next_chunk_++;
            int64_t lo = count_ * chunk / chunks_;
            int64_t hi = count_ * (chunk + 1) / chunks_;
            const auto* fn = fn_;
            lock.unlock();
            if (lo < hi) {
                tl_in_parallel = true;
                (*fn)(lo, hi);
                tl_in_parallel = false;
            }
            lock.lock();
            if (++done_chunks_ == chunks_) cv_done_.notify_all();
        }
    }

    std::mutex mu_;
    std::condition_variable cv_work_, cv_done_;
    std::vector<std::thread> threads_;
    const std::function<void(int64_t, int64_t)>* fn_ = nullptr;
    int64_t count_ = 0, chunks_ = 0, next_chunk_ = 0, done_chunks_ = 0;
    uint64_t generation_ = 0;
};

}  // namespace

void set_max_threads(int n) { g_thread_override.store(n); }

int max_threads() {
    int n = g_thread_override.load();
    return n > 0 ? n : env_thread_count();
}

void parallel_for(int64_t count, const std::function<void(int64_t, int64_t)>& fn) {
    if (count <= 0) return;
    int workers = std::min<int64_t>(max_threads(), count);
    if (workers <= 1 || tl_in_parallel) {  // nested calls run inline
        fn(0, count);
        return;
    }
    Pool::instance().run(count, workers, fn);
}

// --- conv2d ----------------------------------------------------------------

template <typename T>
TensorT<T> conv2d(const TensorT<T>& in, const ConvSpec& spec, const TensorT<T>& weight,
                  const TensorT<T>* bias) {
    spec.validate();
    if (in.shape.c != spec.in_channels)
        throw ShapeError("conv2d: input has " + std::to_string(in.shape.c) +
                         " channels, spec expects " + std::to_string(spec.in_channels));
    if (weight.shape != spec.weight_shape())
        throw ShapeError("conv2d: weight shape " + weight.shape.str() + " does not match " +
                         spec.weight_shape().str());
    if (spec.has_bias) {
        if (!bias) throw ShapeError("conv2d: spec has bias but none given");
        if (bias->numel() != spec.out_channels)
            throw ShapeError("conv2d: bias has " + std::to_string(bias->numel()) +
                             " values, expected " + std::to_string(spec.out_channels));
    }
    Shape os = spec.out_shape(in.shape);
    if (os.h < 1 || os.w < 1)
        throw ShapeError("conv2d: output dims " + os.str() + " are empty for input " +
                         in.shape.str());

    TensorT<T> out(os);
    const int64_t H = in.shape.h, W = in.shape.w, OH = os.h, OW = os.w;
    const int icg = spec.in_channels / spec.groups;
    const int ocg = spec.out_channels / spec.groups;
    const int p = spec.pad;

    // One task per (n, oc). Each output element accumulates in (kh, ic, kw)
    // order regardless of the thread partition.
    parallel_for(os.n * os.c, [&](int64_t lo, int64_t hi) {
        for (int64_t t = lo; t < hi; ++t) {
            const int64_t n = t / os.c;
            const int oc = static_cast<int>(t % os.c);
            const int g = oc / ocg;
            T* op = out.plane(n, oc);
            const T b = spec.has_bias ? bias->data[oc] : T(0);
            for (int64_t i = 0; i < OH * OW; ++i) op[i] = b;
            for (int kh = 0; kh < spec.kh; ++kh) {
                for (int ic = 0; ic < icg; ++ic) {
                    const T* wrow = &weight.data[((static_cast<int64_t>(oc) * icg + ic) *
                                                      spec.kh + kh) * spec.kw];
                    const T* iplane = in.plane(n, g * icg + ic);
                    for (int64_t oh = 0; oh < OH; ++oh) {
                        const int64_t ih = oh - p + kh;
                        if (ih < 0 || ih >= H) continue;
                        const T* irow = iplane + ih * W;
                        T* orow = op + oh * OW;
                        for (int kw = 0; kw < spec.kw; ++kw) {
                            const T wv = wrow[kw];
                            const int64_t lo_w = std::max<int64_t>(0, p - kw);
                            const int64_t hi_w = std::min<int64_t>(OW, W + p - kw);
                            const T* ir = irow - p + kw;
                            for (int64_t ow = lo_w; ow < hi_w; ++ow)
                                orow[ow] += wv * ir[ow];
                        }
                    }
                }
            }
        }
    });
    return out;
}

// --- elementwise -----------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& t) {
    TensorT<T> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) out.data[i] = t.data[i] > T(0) ? t.data[i] : T(0);
    return out;
}

template <typename T>
TensorT<T> sigmoid(const TensorT<T>& t) {
    TensorT<T> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) out.data[i] = T(1) / (T(1) + std::exp(-t.data[i]));
    return out;
}

template <typename T>
TensorT<T> fast_sigmoid(const TensorT<T>& t) {
    TensorT<T> out(t.shape);
    for (int64_t i = 0; i < t.numel(); ++i) {
        const T x = t.data[i];
        out.data[i] = x / (T(1) + std::abs(x));
    }
    return out;
}

template <typename T>
TensorT<T> global_avg_pool(const TensorT<T>& t) {
    if (t.shape.h * t.shape.w < 1)
        throw ShapeError("global_avg_pool: empty spatial extent " + t.shape.str());
    TensorT<T> out({t.shape.n, t.shape.c, 1, 1});
    const int64_t hw = t.shape.h * t.shape.w;
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < t.shape.c; ++c) {
            const T* p = t.plane(n, c);
            T sum = 0;
            for (int64_t i = 0; i < hw; ++i) sum += p[i];
            out.at(n, c, 0, 0) = sum / static_cast<T>(hw);
        }
    return out;
}

template <typename T>
TensorT<T> scale_channels(const TensorT<T>& t, const TensorT<T>& s) {
    if (s.shape.n != t.shape.n || s.shape.c != t.shape.c || s.shape.h != 1 || s.shape.w != 1)
        throw ShapeError("scale_channels: scale shape " + s.shape.str() +
                         " does not broadcast over " + t.shape.str());
    TensorT<T> out(t.shape);
    const int64_t hw = t.shape.h * t.shape.w;
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < t.shape.c; ++c) {
            const T sc = s.at(n, c, 0, 0);
            const T* ip = t.plane(n, c);
            T* op = out.plane(n, c);
            for (int64_t i = 0; i < hw; ++i) op[i] = sc * ip[i];
        }
    return out;
}

template <typename T>
TensorT<T> pixel_shuffle(const TensorT<T>& t, int s) {
    if (s < 1) throw ShapeError("pixel_shuffle: factor must be >= 1");
    if (t.shape.c % (static_cast<int64_t>(s) * s) != 0)
        throw ShapeError("pixel_shuffle: " + std::to_string(t.shape.c) +
                         " channels not divisible by s^2=" + std::to_string(s * s));
    if (s == 1) return t;
    const int64_t oc = t.shape.c / (s * s);
    TensorT<T> out({t.shape.n, oc, t.shape.h * s, t.shape.w * s});
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < oc; ++c) {
            T* op = out.plane(n, c);
            for (int sh = 0; sh < s; ++sh)
                for (int sw = 0; sw < s; ++sw) {
                    const T* ip = t.plane(n, c * s * s + sh * s + sw);
                    for (int64_t y = 0; y < t.shape.h; ++y) {
                        T* orow = op + (y * s + sh) * out.shape.w + sw;
                        const T* irow = ip + y * t.shape.w;
                        for (int64_t x = 0; x < t.shape.w; ++x) orow[x * s] = irow[x];
                    }
                }
        }
    return out;
}

template <typename T>
TensorT<T> bilinear_resize(const TensorT<T>& t, int s) {
    if (s < 1) throw ShapeError("bilinear_resize: factor must be >= 1");
    if (s == 1) return t;
    const int64_t H = t.shape.h, W = t.shape.w;
    TensorT<T> out({t.shape.n, t.shape.c, H * s, W * s});

    // Precompute source taps per output coordinate (half-pixel centers).
    std::vector<int64_t> x0(W * s), y0(H * s);
    std::vector<T> fx(W * s), fy(H * s);
    auto taps = [&](int64_t size, int64_t out_size, std::vector<int64_t>& i0, std::vector<T>& fr) {
        for (int64_t i = 0; i < out_size; ++i) {
            double src = (i + 0.5) / s - 0.5;
            if (src < 0) src = 0;
            if (src > static_cast<double>(size - 1)) src = static_cast<double>(size - 1);
            int64_t lo = static_cast<int64_t>(src);
            if (lo > size - 2) lo = size >= 2 ? size - 2 : 0;
            i0[i] = lo;
            fr[i] = static_cast<T>(src - static_cast<double>(lo));
        }
    };
    taps(H, H * s, y0, fy);
    taps(W, W * s, x0, fx);

    const bool wide = W >= 2, tall = H >= 2;
    for (int64_t n = 0; n < t.shape.n; ++n)
        for (int64_t c = 0; c < t.shape.c; ++c) {
            const T* ip = t.plane(n, c);
            T* op = out.plane(n, c);
            for (int64_t oy = 0; oy < H * s; ++oy) {
                const T* r0 = ip + y0[oy] * W;
                const T* r1 = tall ? r0 + W : r0;
                const T ty = fy[oy];
                T* orow = op + oy * W * s;
                for (int64_t ox = 0; ox < W * s; ++ox) {
                    const int64_t xl = x0[ox];
                    const int64_t xr = wide ? xl + 1 : xl;
                    const T tx = fx[ox];
                    // lerp as a + t*(b-a): exact on constant inputs
                    const T top = r0[xl] + tx * (r0[xr] - r0[xl]);
                    const T bot = r1[xl] + tx * (r1[xr] - r1[xl]);
                    orow[ox] = top + ty * (bot - top);
                }
            }
        }
    return out;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<const TensorT<T>*>& parts) {
    if (parts.empty()) throw ShapeError("concat_channels: no inputs");
    const Shape& first = parts[0]->shape;
    int64_t total_c = 0;
    for (const auto* p : parts) {
        if (p->shape.n != first.n || p->shape.h != first.h || p->shape.w != first.w)
            throw ShapeError("concat_channels: part shape " + p->shape.str() +
                             " does not match " + first.str());
        total_c += p->shape.c;
    }
    TensorT<T> out({first.n, total_c, first.h, first.w});
    const int64_t hw = first.h * first.w;
    for (int64_t n = 0; n < first.n; ++n) {
        int64_t co = 0;
        for (const auto* p : parts)
            for (int64_t c = 0; c < p->shape.c; ++c, ++co)
                std::copy_n(p->plane(n, c), hw, out.plane(n, co));
    }
    return out;
}

template <typename T>
TensorT<T> concat_channels(const std::vector<TensorT<T>>& parts) {
    std::vector<const TensorT<T>*> ptrs;
    ptrs.reserve(parts.size());
    for (const auto& p : parts) ptrs.push_back(&p);
    return concat_channels(ptrs);
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape != b.shape)
        throw ShapeError("add: shape " + a.shape.str() + " vs " + b.shape.str());
    TensorT<T> out(a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) out.data[i] = a.data[i] + b.data[i];
    return out;
}

template TensorT<float> conv2d(const TensorT<float>&, const ConvSpec&, const TensorT<float>&, const TensorT<float>*);
template TensorT<double> conv2d(const TensorT<double>&, const ConvSpec&, const TensorT<double>&, const TensorT<double>*);
template TensorT<float> relu(const TensorT<float>&);
template TensorT<double> relu(const TensorT<double>&);
template TensorT<float> sigmoid(const TensorT<float>&);
template TensorT<double> sigmoid(const TensorT<double>&);
template TensorT<float> fast_sigmoid(const TensorT<float>&);
template TensorT<double> fast_sigmoid(const TensorT<double>&);
template TensorT<float> global_avg_pool(const TensorT<float>&);
template TensorT<double> global_avg_pool(const TensorT<double>&);
template TensorT<float> scale_channels(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> scale_channels(const TensorT<double>&, const TensorT<double>&);
template TensorT<float> pixel_shuffle(const TensorT<float>&, int);
template TensorT<double> pixel_shuffle(const TensorT<double>&, int);
template TensorT<float> bilinear_resize(const TensorT<float>&, int);
template TensorT<double> bilinear_resize(const TensorT<double>&, int);
template TensorT<float> concat_channels(const std::vector<const TensorT<float>*>&);
template TensorT<double> concat_channels(const std::vector<const TensorT<double>*>&);
template TensorT<float> concat_channels(const std::vector<TensorT<float>>&);
template TensorT<double> concat_channels(const std::vector<TensorT<double>>&);
template TensorT<float> add(const TensorT<float>&, const TensorT<float>&);
template TensorT<double> add(const TensorT<double>&, const TensorT<double>&);

}  // namespace mcan
