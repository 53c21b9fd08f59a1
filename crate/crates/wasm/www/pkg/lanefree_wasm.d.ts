/* tslint:disable */
/* eslint-disable */

export class Ring {
    free(): void;
    [Symbol.dispose](): void;
    /**
     * Advances `steps` steps of 0.25 s.
     */
    advance(steps: number): void;
    /**
     * Ring road of 1 km at `density` veh/km.
     */
    constructor(density: number, seed: bigint);
    road_length(): number;
    time(): number;
    /**
     * `x1 (wrapped), x2, x3, length, width, emergency` per vehicle.
     */
    vehicles(): Float64Array;
}

/**
 * One planning decision for an ego at `ego` (`x1, x2, x3, x4`) among
 * constant-velocity obstacles. Returns `x1, x2` of every planned state
 * followed by a flag: 0 regular, 1 longitudinal emergency, 2 lateral.
 */
export function plan_trajectory(ego: Float64Array, v_des1: number, omega1: number, obstacles: Float64Array): Float64Array;

/**
 * Summed potential on an `nx × ny` grid over `[0, x1_max] × [0, x2_max]`,
 * row-major in x2. `obstacles` holds `x1, x2, x3, x4` per obstacle.
 */
export function potential_field(nx: number, ny: number, x1_max: number, x2_max: number, ego_x3: number, ego_x4: number, omega1: number, obstacles: Float64Array): Float64Array;

export type InitInput = RequestInfo | URL | Response | BufferSource | WebAssembly.Module;

export interface InitOutput {
    readonly memory: WebAssembly.Memory;
    readonly __wbg_ring_free: (a: number, b: number) => void;
    readonly plan_trajectory: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
    readonly potential_field: (a: number, b: number, c: number, d: number, e: number, f: number, g: number, h: number, i: number) => [number, number];
    readonly ring_advance: (a: number, b: number) => [number, number];
    readonly ring_new: (a: number, b: bigint) => [number, number, number];
    readonly ring_road_length: (a: number) => number;
    readonly ring_time: (a: number) => number;
    readonly ring_vehicles: (a: number) => [number, number];
    readonly __wbindgen_externrefs: WebAssembly.Table;
    readonly __wbindgen_malloc: (a: number, b: number) => number;
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
