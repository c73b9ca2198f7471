/* tslint:disable */
/* eslint-disable */

export function comparePolicies(seed: number, days: number, drift_pct: number, vol_pct: number, fee_bps: number): string;

export function rewardSurface(m_s: number, m_m: number, m_l: number, multi_timescale: boolean, trade_delta: boolean, max_position: number): string;

export function sizingExplorer(win_prob: number, payoff_ratio: number, kelly_scale: number, alpha: number, budget: number, vol_pct: number, seed: number): string;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly comparePolicies: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
    readonly rewardSurface: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number];
    readonly sizingExplorer: (a: number, b: number, c: number, d: number, e: number, f: number, g: number) => [number, number, number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __externref_table_dealloc: (a: number) => void;
    readonly __wbindgen_free: (a: number, b: number, c: number) => void;
    readonly __wbindgen_start: () => void;
}

export type SyncInitInput = BufferSource | WebAssembly.Module;

/**
 * Instantiates the given `module`, which can either be bytes or
 * a precompiled `WebAssembly.Module`.
 *
 * @param {{ module: SyncInitInput }} module - Passing `SyncInitInput` directly is deprecated.
 *
 * @returns {InitOutput}
 */
export function initSync(module: { module: SyncInitInput } | SyncInitInput): InitOutput;

/**
 * If `module_or_path` is {RequestInfo} or {URL}, makes a request and
 * for everything else, calls `WebAssembly.instantiate` directly.
 *
 * @param {{ module_or_path: InitInput | Promise<InitInput> }} module_or_path - Passing `InitInput` directly is deprecated.
 *
 * @returns {Promise<InitOutput>}
 */
export default function __wbg_init (module_or_path?: { module_or_path: InitInput | Promise<InitInput> } | InitInput | Promise<InitInput>): Promise<InitOutput>;
