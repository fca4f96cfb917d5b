//! Deterministic in-process storefront implementing the environment contract,
//! with full/reduced filter-panel variants. Also renders each state as HTML
//! (single template) so the selector-based extractor can be exercised against
//! it end to end, and can serve that HTML over a local HTTP listener.

use crate::env::{
    action_space, Action, EnvError, EnvSession, ExecResult, FilterGroup, FilterOption, Observation,
    PageType, ProductDetail, ProductSummary,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

/// One catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub id: String,
    pub title: String,
    pub brand: String,
    pub price: f64,
    pub rating: f64,
    pub review_count: u32,
    pub department: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct Catalog {
    pub products: Vec<Product>,
    pub departments: Vec<String>,
}

impl Catalog {
    /// Builds a catalog from product records; departments are the distinct
    /// product departments in sorted order.
    pub fn from_products(products: Vec<Product>) -> Result<Self, EnvError> {
        let mut ids = BTreeSet::new();
        for p in &products {
            if !ids.insert(p.id.clone()) {
                return Err(EnvError::InvalidObservation(format!(
                    "duplicate product id {:?} in catalog",
                    p.id
                )));
            }
            if p.price <= 0.0 {
                return Err(EnvError::InvalidObservation(format!(
                    "product {:?} has non-positive price",
                    p.id
                )));
            }
            if !(0.0..=5.0).contains(&p.rating) {
                return Err(EnvError::InvalidObservation(format!(
                    "product {:?} rating outside [0, 5]",
                    p.id
                )));
            }
        }
        let departments: Vec<String> = products
            .iter()
            .map(|p| p.department.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        Ok(Catalog {
            products,
            departments,
        })
    }

    /// Loads a catalog file: a JSON array of product records.
    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| EnvError::Transport(format!("reading {}: {}", path.display(), e)))?;
        let products: Vec<Product> = serde_json::from_str(&text)
            .map_err(|e| EnvError::InvalidObservation(format!("{}: {}", path.display(), e)))?;
        Catalog::from_products(products)
    }
}

const STOPWORDS: [&str; 19] = [
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "in", "is", "it", "of", "on",
    "or", "the", "to", "with",
];

/// Lowercases, splits on non-alphanumeric runs, and drops stopwords.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOPWORDS.contains(t))
        .map(|t| t.to_string())
        .collect()
}

fn product_tokens(p: &Product) -> BTreeSet<String> {
    let mut tokens = tokenize(&p.title);
    for (key, value) in &p.attributes {
        tokens.extend(tokenize(key));
        tokens.extend(tokenize(value));
    }
    tokens
}

/// Token-overlap relevance: |tokens(query) ∩ tokens(title ∪ attributes)| /
/// |tokens(query)|. Zero-score products are excluded; ties break by rating
/// descending then id ascending; the top 10 are returned.
pub fn search_rank(catalog: &Catalog, query: &str) -> Vec<Product> {
    let query_tokens = tokenize(query);
    if query_tokens.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(f64, &Product)> = catalog
        .products
        .iter()
        .filter_map(|p| {
            let overlap = product_tokens(p).intersection(&query_tokens).count();
            if overlap == 0 {
                None
            } else {
                Some((overlap as f64 / query_tokens.len() as f64, p))
            }
        })
        .collect();
    scored.sort_by(|(sa, pa), (sb, pb)| {
        sb.partial_cmp(sa)
            .unwrap()
            .then(pb.rating.partial_cmp(&pa.rating).unwrap())
            .then(pa.id.cmp(&pb.id))
    });
    scored
        .into_iter()
        .take(10)
        .map(|(_, p)| p.clone())
        .collect()
}

/// Scores a filter option label against the search query.
pub trait SimilarityScorer: Send + Sync {
    fn score(&self, option: &str, query: &str) -> f64;
}

/// Default scorer: |tokens(option) ∩ tokens(query)| / |tokens(option)|.
pub struct TokenOverlapScorer;

impl SimilarityScorer for TokenOverlapScorer {
    fn score(&self, option: &str, query: &str) -> f64 {
        let option_tokens = tokenize(option);
        if option_tokens.is_empty() {
            return 0.0;
        }
        let query_tokens = tokenize(query);
        option_tokens.intersection(&query_tokens).count() as f64 / option_tokens.len() as f64
    }
}

pub fn scorer_by_id(id: &str) -> Option<Box<dyn SimilarityScorer>> {
    match id {
        "token_overlap" => Some(Box::new(TokenOverlapScorer)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterMode {
    Full,
    Reduced { threshold: f64, scorer: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantConfig {
    pub filter_mode: FilterMode,
}

impl VariantConfig {
    pub fn full() -> Self {
        VariantConfig {
            filter_mode: FilterMode::Full,
        }
    }

    /// Reduced filter panel at the conventional 0.8 similarity cutoff.
    pub fn reduced_default() -> Self {
        VariantConfig {
            filter_mode: FilterMode::Reduced {
                threshold: 0.8,
                scorer: "token_overlap".to_string(),
            },
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if let FilterMode::Reduced { threshold, scorer } = &self.filter_mode {
            if !(0.0..=1.0).contains(threshold) {
                return Err(EnvError::InvalidObservation(format!(
                    "reduced filter threshold {} outside [0, 1]",
                    threshold
                )));
            }
            if scorer_by_id(scorer).is_none() {
                return Err(EnvError::InvalidObservation(format!(
                    "unknown similarity scorer {:?}",
                    scorer
                )));
            }
        }
        Ok(())
    }
}

/// Price buckets are half-open: `<25` is price < 25, `25-50` is 25 <= p < 50,
/// and `>100` is p >= 100.
const PRICE_BUCKETS: [(&str, f64, f64); 4] = [
    ("<25", 0.0, 25.0),
    ("25-50", 25.0, 50.0),
    ("50-100", 50.0, 100.0),
    (">100", 100.0, f64::INFINITY),
];

const RATING_OPTIONS: [(&str, f64); 2] = [(">=4", 4.0), (">=3", 3.0)];

pub const GROUP_DEPARTMENT: &str = "Department";
pub const GROUP_BRAND: &str = "Brand";
pub const GROUP_PRICE: &str = "Price";
pub const GROUP_RATING: &str = "Rating";

/// Derives the filter panel for a result set. Department and Brand options
/// come from the results; Price and Rating use fixed option sets. In reduced
/// mode, options scoring below the threshold against the query are dropped,
/// and groups left empty by pruning are dropped with them.
pub fn build_filter_groups(
    results: &[Product],
    variant: &VariantConfig,
    query: &str,
) -> Vec<FilterGroup> {
    let departments: Vec<String> = results
        .iter()
        .map(|p| p.department.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let brands: Vec<String> = results
        .iter()
        .map(|p| p.brand.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut groups = vec![
        (GROUP_DEPARTMENT, departments),
        (GROUP_BRAND, brands),
        (
            GROUP_PRICE,
            PRICE_BUCKETS
                .iter()
                .map(|(l, _, _)| l.to_string())
                .collect(),
        ),
        (
            GROUP_RATING,
            RATING_OPTIONS.iter().map(|(l, _)| l.to_string()).collect(),
        ),
    ];

    if let FilterMode::Reduced { threshold, scorer } = &variant.filter_mode {
        let scorer = scorer_by_id(scorer).expect("validated scorer id");
        for (_, options) in &mut groups {
            options.retain(|o| scorer.score(o, query) >= *threshold);
        }
    }
    // Groups left empty (zero-result searches, or pruning) are dropped.
    groups.retain(|(_, options)| !options.is_empty());

    groups
        .into_iter()
        .map(|(name, options)| FilterGroup {
            name: name.to_string(),
            options: options
                .into_iter()
                .map(|value| FilterOption {
                    value,
                    selected: false,
                })
                .collect(),
        })
        .collect()
}

fn price_in_bucket(price: f64, label: &str) -> bool {
    PRICE_BUCKETS
        .iter()
        .any(|(l, lo, hi)| *l == label && price >= *lo && price < *hi)
}

fn rating_matches(rating: f64, label: &str) -> bool {
    RATING_OPTIONS
        .iter()
        .any(|(l, min)| *l == label && rating >= *min)
}

/// Conjunctive across groups, disjunctive within a group.
fn satisfies_filters(p: &Product, filters: &BTreeSet<(String, String)>) -> bool {
    let groups: BTreeSet<&String> = filters.iter().map(|(g, _)| g).collect();
    for group in groups {
        let any = filters
            .iter()
            .filter(|(g, _)| g == group)
            .any(|(_, value)| match group.as_str() {
                GROUP_BRAND => p.brand == *value,
                GROUP_DEPARTMENT => p.department == *value,
                GROUP_PRICE => price_in_bucket(p.price, value),
                GROUP_RATING => rating_matches(p.rating, value),
                _ => false,
            });
        if !any {
            return false;
        }
    }
    true
}

/// Full storefront state for one session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShopState {
    pub page: PageType,
    pub query: Option<String>,
    pub active_filters: BTreeSet<(String, String)>,
    pub base_results: Vec<Product>,
    pub viewing: Option<Product>,
    pub purchases: Vec<(String, f64)>,
    pub terminated: bool,
}

impl ShopState {
    pub fn new() -> Self {
        ShopState {
            page: PageType::Home,
            query: None,
            active_filters: BTreeSet::new(),
            base_results: Vec::new(),
            viewing: None,
            purchases: Vec::new(),
            terminated: false,
        }
    }

    /// Results currently listed: the base ranking narrowed by active filters.
    pub fn displayed_results(&self) -> Vec<&Product> {
        self.base_results
            .iter()
            .filter(|p| satisfies_filters(p, &self.active_filters))
            .collect()
    }

    pub fn spend(&self) -> f64 {
        self.purchases.iter().map(|(_, price)| price).sum()
    }
}

impl Default for ShopState {
    fn default() -> Self {
        Self::new()
    }
}

/// Projects the state into the observation contract.
pub fn observation(state: &ShopState, variant: &VariantConfig) -> Observation {
    let cart_count = state.purchases.len() as u32;
    match state.page {
        PageType::Home => Observation::home(cart_count),
        PageType::SearchResults => {
            let query = state.query.clone().unwrap_or_default();
            let mut filter_groups = build_filter_groups(&state.base_results, variant, &query);
            for group in &mut filter_groups {
                for option in &mut group.options {
                    option.selected = state
                        .active_filters
                        .contains(&(group.name.clone(), option.value.clone()));
                }
            }
            let products = state
                .displayed_results()
                .iter()
                .enumerate()
                .map(|(i, p)| ProductSummary {
                    index: i + 1,
                    title: p.title.clone(),
                    price: p.price,
                    rating: p.rating,
                    review_count: p.review_count,
                })
                .collect();
            Observation {
                page_type: PageType::SearchResults,
                query: state.query.clone(),
                products,
                filter_groups,
                detail: None,
                cart_count,
                notices: Vec::new(),
            }
        }
        PageType::ProductDetail => {
            let p = state.viewing.as_ref().expect("detail page has a product");
            Observation {
                page_type: PageType::ProductDetail,
                query: state.query.clone(),
                products: Vec::new(),
                filter_groups: Vec::new(),
                detail: Some(ProductDetail {
                    title: p.title.clone(),
                    brand: p.brand.clone(),
                    price: p.price,
                    rating: p.rating,
                    review_count: p.review_count,
                    department: p.department.clone(),
                    attributes: p.attributes.clone(),
                }),
                cart_count,
                notices: Vec::new(),
            }
        }
        PageType::PurchaseConfirmation => {
            let notice = state
                .purchases
                .last()
                .map(|(id, price)| {
                    let title = state
                        .viewing
                        .as_ref()
                        .filter(|p| p.id == *id)
                        .map(|p| p.title.clone())
                        .unwrap_or_else(|| id.clone());
                    format!("Purchased {} for ${:.2}", title, price)
                })
                .into_iter()
                .collect();
            Observation {
                page_type: PageType::PurchaseConfirmation,
                query: state.query.clone(),
                products: Vec::new(),
                filter_groups: Vec::new(),
                detail: None,
                cart_count,
                notices: notice,
            }
        }
    }
}

/// Pure state-transition function. The action must be inside the action
/// space of the state's observation.
pub fn transition(
    state: &ShopState,
    action: &Action,
    catalog: &Catalog,
    variant: &VariantConfig,
) -> Result<ShopState, EnvError> {
    if state.terminated {
        return Err(EnvError::ExecutionFailed(
            "session is terminated; no further transitions".into(),
        ));
    }
    let obs = observation(state, variant);
    let space = action_space(&obs);
    if let Err(reason) = space.check(action) {
        return Err(EnvError::OutOfSpace {
            action: action.to_command(),
            reason,
        });
    }

    let mut next = state.clone();
    match action {
        Action::Search { query } => {
            next.page = PageType::SearchResults;
            next.query = Some(query.clone());
            next.active_filters.clear();
            next.base_results = search_rank(catalog, query);
            next.viewing = None;
        }
        Action::ClickFilter { group, value } => {
            // Toggle, using the exact casing listed in the space.
            let (group, value) = space
                .resolve_filter(group, value)
                .expect("checked against space");
            let key = (group, value);
            if !next.active_filters.remove(&key) {
                next.active_filters.insert(key);
            }
        }
        Action::ClickProduct { index } => {
            let displayed = state.displayed_results();
            next.viewing = Some(displayed[index - 1].clone());
            next.page = PageType::ProductDetail;
        }
        Action::Purchase => {
            let p = state.viewing.as_ref().expect("checked against space");
            next.purchases.push((p.id.clone(), p.price));
            next.page = PageType::PurchaseConfirmation;
        }
        Action::Stop => {
            next.terminated = true;
        }
    }
    Ok(next)
}

/// One simulated shopping session.
pub struct MockShopSession {
    catalog: Arc<Catalog>,
    variant: VariantConfig,
    state: ShopState,
}

impl MockShopSession {
    pub fn new(catalog: Arc<Catalog>, variant: VariantConfig) -> Self {
        MockShopSession {
            catalog,
            variant,
            state: ShopState::new(),
        }
    }

    pub fn state(&self) -> &ShopState {
        &self.state
    }

    pub fn variant(&self) -> &VariantConfig {
        &self.variant
    }
}

impl EnvSession for MockShopSession {
    fn observe(&mut self) -> Result<Observation, EnvError> {
        Ok(observation(&self.state, &self.variant))
    }

    fn execute(&mut self, action: &Action) -> Result<ExecResult, EnvError> {
        let start = Instant::now();
        self.state = transition(&self.state, action, &self.catalog, &self.variant)?;
        Ok(ExecResult::ok(start.elapsed().as_secs_f64()))
    }
}

/// Opens a fresh storefront session per worker, bound to the arm's variant.
pub struct MockShopFactory {
    catalog: Arc<Catalog>,
    variants: BTreeMap<String, VariantConfig>,
}

impl MockShopFactory {
    pub fn new(catalog: Arc<Catalog>, variants: BTreeMap<String, VariantConfig>) -> Self {
        MockShopFactory { catalog, variants }
    }
}

impl crate::env::EnvFactory for MockShopFactory {
    fn open(&self, variant_id: &str, _session_seed: u64) -> Result<Box<dyn EnvSession>, EnvError> {
        let variant = self.variants.get(variant_id).ok_or_else(|| {
            EnvError::ExecutionFailed(format!("no variant config for {:?}", variant_id))
        })?;
        Ok(Box::new(MockShopSession::new(
            self.catalog.clone(),
            variant.clone(),
        )))
    }
}

fn html_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Renders an observation as the storefront's HTML page. The markup carries
/// the ids and classes targeted by the bundled extraction ruleset, plus real
/// links so the page is navigable when served over HTTP.
pub fn render_html(obs: &Observation) -> String {
    let mut body = String::new();
    let query_attr = html_escape(obs.query.as_deref().unwrap_or(""));
    body.push_str(&format!(
        "<header>\n<form id=\"search-form\" action=\"/search\" method=\"get\">\n\
         <input id=\"search-box\" name=\"q\" type=\"text\" value=\"{}\">\n\
         <button id=\"search-submit\" type=\"submit\">Search</button>\n</form>\n\
         Cart: <span id=\"cart-count\">{}</span>\n</header>\n",
        query_attr, obs.cart_count
    ));
    for notice in &obs.notices {
        body.push_str(&format!(
            "<div class=\"notice\">{}</div>\n",
            html_escape(notice)
        ));
    }
    match obs.page_type {
        PageType::Home => {
            body.push_str(
                "<main id=\"home-hero\">\n<h1>MockShop</h1>\n<p>Search the catalog to begin.</p>\n</main>\n",
            );
        }
        PageType::SearchResults => {
            body.push_str("<main id=\"results\">\n<aside id=\"filters\">\n");
            for group in &obs.filter_groups {
                body.push_str(&format!(
                    "<div class=\"filter-group\">\n<h3 class=\"filter-name\">{}</h3>\n<ul>\n",
                    html_escape(&group.name)
                ));
                for option in &group.options {
                    body.push_str(&format!(
                        "<li class=\"filter-option\" data-group=\"{}\" data-value=\"{}\" data-selected=\"{}\"><a href=\"/filter?group={}&amp;value={}\">{}</a></li>\n",
                        html_escape(&group.name),
                        html_escape(&option.value),
                        option.selected,
                        urlencode(&group.name),
                        urlencode(&option.value),
                        html_escape(&option.value)
                    ));
                }
                body.push_str("</ul>\n</div>\n");
            }
            body.push_str("</aside>\n<ol id=\"result-list\">\n");
            for p in &obs.products {
                body.push_str(&format!(
                    "<li class=\"result-card\">\n<a class=\"result-title\" href=\"/product/{}\">{}</a>\n\
                     <span class=\"result-price\">${:.2}</span>\n\
                     <span class=\"result-rating\">{:.2} out of 5 stars</span>\n\
                     <span class=\"result-reviews\">({})</span>\n</li>\n",
                    p.index,
                    html_escape(&p.title),
                    p.price,
                    p.rating,
                    p.review_count
                ));
            }
            body.push_str("</ol>\n</main>\n");
        }
        PageType::ProductDetail => {
            let d = obs.detail.as_ref().expect("detail page has a detail block");
            body.push_str(&format!(
                "<main id=\"product-detail\">\n<h1 class=\"detail-title\">{}</h1>\n\
                 <span class=\"detail-brand\">{}</span>\n\
                 <span class=\"detail-price\">${:.2}</span>\n\
                 <span class=\"detail-rating\">{:.2} out of 5 stars</span>\n\
                 <span class=\"detail-reviews\">({})</span>\n\
                 <span class=\"detail-department\">{}</span>\n<table>\n",
                html_escape(&d.title),
                html_escape(&d.brand),
                d.price,
                d.rating,
                d.review_count,
                html_escape(&d.department)
            ));
            for (key, value) in &d.attributes {
                body.push_str(&format!(
                    "<tr class=\"detail-attr\"><td class=\"attr-key\">{}</td><td class=\"attr-value\">{}</td></tr>\n",
                    html_escape(key),
                    html_escape(value)
                ));
            }
            body.push_str("</table>\n<a id=\"buy-button\" href=\"/buy\">Buy Now</a>\n</main>\n");
        }
        PageType::PurchaseConfirmation => {
            body.push_str(
                "<main id=\"purchase-confirmation\">\n<h1>Order placed</h1>\n\
                 <p>Thank you for your purchase.</p>\n</main>\n",
            );
        }
    }
    format!(
        "<!doctype html>\n<html>\n<head><title>MockShop</title></head>\n<body>\n{}</body>\n</html>\n",
        body
    )
}

fn urlencode(text: &str) -> String {
    url::form_urlencoded::byte_serialize(text.as_bytes()).collect()
}

pub mod http {
    //! Minimal HTTP front end serving the rendered storefront, enough for a
    //! real browser or an HTTP client to drive a session end to end.

    use super::*;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::{TcpListener, TcpStream};
    use std::sync::atomic::{AtomicBool, Ordering};
    use std::sync::Mutex;
    use std::thread::JoinHandle;

    pub struct ShopServer {
        addr: std::net::SocketAddr,
        stop: Arc<AtomicBool>,
        handle: Option<JoinHandle<()>>,
    }

    impl ShopServer {
        pub fn url(&self) -> String {
            format!("http://{}", self.addr)
        }

        pub fn shutdown(mut self) {
            self.stop.store(true, Ordering::SeqCst);
            // Wake the accept loop.
            let _ = TcpStream::connect(self.addr);
            if let Some(handle) = self.handle.take() {
                let _ = handle.join();
            }
        }
    }

    impl Drop for ShopServer {
        fn drop(&mut self) {
            self.stop.store(true, Ordering::SeqCst);
            let _ = TcpStream::connect(self.addr);
            if let Some(handle) = self.handle.take() {
                let _ = handle.join();
            }
        }
    }

    /// Starts the storefront on `addr` (use port 0 for an ephemeral port).
    pub fn serve(
        catalog: Arc<Catalog>,
        variant: VariantConfig,
        addr: &str,
    ) -> std::io::Result<ShopServer> {
        let listener = TcpListener::bind(addr)?;
        let local = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let session = Mutex::new(MockShopSession::new(catalog, variant));
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let mut session = session.lock().expect("shop session lock");
                let _ = handle_request(stream, &mut session);
            }
        });
        Ok(ShopServer {
            addr: local,
            stop,
            handle: Some(handle),
        })
    }

    fn handle_request(mut stream: TcpStream, session: &mut MockShopSession) -> std::io::Result<()> {
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut request_line = String::new();
        reader.read_line(&mut request_line)?;
        let mut content_length = 0usize;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line)?;
            if line == "\r\n" || line == "\n" || line.is_empty() {
                break;
            }
            if let Some(rest) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                content_length = rest.trim().parse().unwrap_or(0);
            }
        }
        if content_length > 0 {
            let mut body = vec![0u8; content_length];
            reader.read_exact(&mut body)?;
        }

        let mut parts = request_line.split_whitespace();
        let _method = parts.next().unwrap_or("");
        let target = parts.next().unwrap_or("/");
        let (path, query_string) = match target.split_once('?') {
            Some((p, q)) => (p, q),
            None => (target, ""),
        };
        let params: BTreeMap<String, String> = url::form_urlencoded::parse(query_string.as_bytes())
            .into_owned()
            .collect();

        let action = route_action(path, &params);
        let response = match action {
            Ok(Some(action)) => match session.execute(&action) {
                Ok(_) => page_response(session),
                Err(e) => error_response(400, &e.to_string()),
            },
            Ok(None) => page_response(session),
            Err(msg) => error_response(404, &msg),
        };
        stream.write_all(response.as_bytes())
    }

    fn route_action(
        path: &str,
        params: &BTreeMap<String, String>,
    ) -> Result<Option<Action>, String> {
        match path {
            "/" => Ok(None),
            "/search" => {
                let q = params.get("q").cloned().unwrap_or_default();
                Ok(Some(Action::Search { query: q }))
            }
            "/filter" => {
                let group = params.get("group").cloned().unwrap_or_default();
                let value = params.get("value").cloned().unwrap_or_default();
                Ok(Some(Action::ClickFilter { group, value }))
            }
            "/buy" => Ok(Some(Action::Purchase)),
            "/stop" => Ok(Some(Action::Stop)),
            _ => {
                if let Some(index) = path.strip_prefix("/product/") {
                    let index: usize =
                        index.parse().map_err(|_| "bad product index".to_string())?;
                    Ok(Some(Action::ClickProduct { index }))
                } else {
                    Err(format!("no such route: {}", path))
                }
            }
        }
    }

    fn page_response(session: &mut MockShopSession) -> String {
        let obs = session.observe().expect("mock shop observation");
        let html = render_html(&obs);
        format!(
            "HTTP/1.1 200 OK\r\nContent-Type: text/html; charset=utf-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            html.len(),
            html
        )
    }

    fn error_response(code: u16, message: &str) -> String {
        format!(
            "HTTP/1.1 {} Error\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            code,
            message.len(),
            message
        )
    }
}
